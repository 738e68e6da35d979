"""File formats: JSONL prediction dumps, artifact JSON, CSV/SVG exports.

Dumps are JSON Lines, one record per line:

    {"id": "...", "y": [d reals], "samples": [{"mean": [d reals], "log_var": r}, ...]}

Reals are serialized with full round-trip precision (shortest repr), so a
load/save cycle is byte-stable. Calibration artifacts are JSON documents in
which every real is a decimal string of full precision.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .core import CalibrationArtifact, McPredictionSet, McRecord, McSample, validate


class DumpFormatError(ValueError):
    pass


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_vector(value, name: str, lineno: int, errors: list[str]):
    if not isinstance(value, list) or not value or not all(_is_number(v) for v in value):
        errors.append(f"line {lineno}: field {name} must be a non-empty array of numbers")
        return None
    if not all(math.isfinite(v) for v in value):
        errors.append(f"line {lineno}: non-finite {name}")
        return None
    return [float(v) for v in value]


def load_dump(path) -> McPredictionSet:
    """Parse and validate a JSONL prediction dump.

    All problems are aggregated into one :class:`DumpFormatError` whose
    message lists every offending line number and field.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    errors: list[str] = []
    records: list[McRecord] = []
    d = None
    n_samples = None
    any_content = False
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        any_content = True
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            errors.append(f"line {lineno}: invalid JSON ({exc.msg})")
            continue
        if not isinstance(obj, dict):
            errors.append(f"line {lineno}: record must be a JSON object")
            continue
        line_ok = True
        for fld in ("id", "y", "samples"):
            if fld not in obj:
                errors.append(f"line {lineno}: missing field {fld}")
                line_ok = False
        if not line_ok:
            continue
        if not isinstance(obj["id"], str):
            errors.append(f"line {lineno}: field id must be a string")
            continue
        y = _check_vector(obj["y"], "y", lineno, errors)
        if y is None:
            continue
        if d is None:
            d = len(y)
        elif len(y) != d:
            errors.append(f"line {lineno}: y has length {len(y)}, expected {d}")
            continue
        raw_samples = obj["samples"]
        if not isinstance(raw_samples, list) or not raw_samples:
            errors.append(f"line {lineno}: field samples must be a non-empty array")
            continue
        samples = []
        for j, s in enumerate(raw_samples):
            if not isinstance(s, dict) or "mean" not in s or "log_var" not in s:
                errors.append(f"line {lineno}: sample {j} must have mean and log_var")
                samples = None
                break
            mean = _check_vector(s["mean"], f"samples[{j}].mean", lineno, errors)
            if mean is None or len(mean) != d:
                if mean is not None:
                    errors.append(
                        f"line {lineno}: samples[{j}].mean has length {len(mean)}, expected {d}"
                    )
                samples = None
                break
            lv = s["log_var"]
            if not _is_number(lv) or not math.isfinite(lv):
                errors.append(f"line {lineno}: non-finite log_var in sample {j}")
                samples = None
                break
            samples.append(McSample(mean=np.array(mean), log_var=float(lv)))
        if samples is None:
            continue
        if n_samples is None:
            n_samples = len(samples)
        elif len(samples) != n_samples:
            errors.append(
                f"line {lineno}: inconsistent N (expected {n_samples}, got {len(samples)})"
            )
            continue
        records.append(McRecord(id=obj["id"], y=np.array(y), samples=samples))
    if not any_content:
        raise DumpFormatError("empty dump file")
    if errors:
        raise DumpFormatError("; ".join(errors))
    pset = McPredictionSet(d=d, records=records)
    leftover = validate(pset)
    if leftover:
        raise DumpFormatError("; ".join(leftover))
    return pset


def dump_line(record: McRecord) -> str:
    obj = {
        "id": record.id,
        "y": [float(v) for v in record.y],
        "samples": [
            {"mean": [float(v) for v in s.mean], "log_var": float(s.log_var)}
            for s in record.samples
        ],
    }
    return json.dumps(obj, separators=(",", ":"))


def save_dump(pset: McPredictionSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in pset.records:
            fh.write(dump_line(rec) + "\n")


# -- calibration artifacts ---------------------------------------------------


def _real(x) -> str:
    return repr(float(x))


def _meta_to_json(meta: dict) -> dict:
    out = {}
    for key in sorted(meta):
        v = meta[key]
        out[key] = _real(v) if isinstance(v, float) else v
    return out


def _meta_from_json(meta: dict) -> dict:
    out = {}
    for key, v in meta.items():
        if isinstance(v, str):
            try:
                out[key] = float(v)
                continue
            except ValueError:
                pass
        out[key] = v
    return out


def artifact_to_json(calib: CalibrationArtifact) -> dict:
    doc = {
        "method": calib.method,
        "likelihood": calib.likelihood,
        "target": calib.target,
    }
    if calib.method == "sigma":
        doc["s"] = _real(calib.s)
    if calib.method == "aux":
        from .calibrate import _unflatten

        params = _unflatten(calib.aux_weights, calib.aux_shapes)
        doc["aux"] = {
            "h": int(calib.aux_shapes["b1"][0]),
            "w1": [_real(v) for v in params["w1"]],
            "b1": [_real(v) for v in params["b1"]],
            "w2": [_real(v) for v in params["w2"]],
            "b2": _real(params["b2"][0]),
        }
    doc["fit_meta"] = _meta_to_json(calib.fit_meta)
    return doc


def artifact_from_json(doc: dict) -> CalibrationArtifact:
    method = doc.get("method")
    kwargs = {
        "method": method,
        "likelihood": doc.get("likelihood", "gaussian"),
        "target": doc.get("target", "predictive"),
        "fit_meta": _meta_from_json(doc.get("fit_meta", {})),
    }
    if method == "sigma":
        kwargs["s"] = float(doc["s"])
    elif method == "aux":
        from .calibrate import aux_shapes

        aux = doc["aux"]
        h = int(aux["h"])
        weights = np.concatenate(
            [
                np.array([float(v) for v in aux["w1"]]),
                np.array([float(v) for v in aux["b1"]]),
                np.array([float(v) for v in aux["w2"]]),
                np.array([float(aux["b2"])]),
            ]
        )
        kwargs["aux_weights"] = weights
        kwargs["aux_shapes"] = aux_shapes(h)
    return CalibrationArtifact(**kwargs)


def save_artifact(calib: CalibrationArtifact, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(artifact_to_json(calib), fh, indent=2)
        fh.write("\n")


def load_artifact(path) -> CalibrationArtifact:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return artifact_from_json(doc)


# -- CSV / SVG exports -------------------------------------------------------


def _write_csv(path, header: str, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def trace_to_csv(trace, path) -> None:
    rows = []
    for i in range(trace.n_epochs):
        s_col = _real(trace.s[i]) if trace.s is not None else ""
        rows.append(
            [
                str(i + 1),
                _real(trace.train_mse[i]),
                _real(trace.test_mse[i]),
                _real(trace.train_sigma2[i]),
                _real(trace.test_sigma2[i]),
                _real(trace.train_nll[i]),
                _real(trace.test_nll[i]),
                s_col,
            ]
        )
    _write_csv(
        path,
        "epoch,train_mse,test_mse,train_sigma2,test_sigma2,train_nll,test_nll,s",
        rows,
    )


def coverage_to_csv(table, path) -> None:
    rows = [[_real(g), _real(z), _real(obs)] for g, z, obs in table.rows()]
    _write_csv(path, "level,z,observed", rows)


def rejection_to_csv(curve, path) -> None:
    rows = [
        [_real(t), _real(fr), _real(mk)]
        for t, fr, mk in zip(curve.thresholds, curve.frac_rejected, curve.mse_kept)
    ]
    _write_csv(path, "threshold,frac_rejected,mse_kept", rows)


def ood_to_csv(comparison, path) -> None:
    edges = comparison.in_dist.edges
    rows = [
        [_real(edges[i]), _real(edges[i + 1]),
         str(int(comparison.in_dist.counts[i])), str(int(comparison.shifted.counts[i]))]
        for i in range(len(edges) - 1)
    ]
    _write_csv(path, "bin_lower,bin_upper,count_in,count_shifted", rows)


def diagram_to_csv(bins, path) -> None:
    rows = [
        [_real(b.lower), _real(b.upper), str(b.count), _real(b.uncert_mean), _real(b.var_obs)]
        for b in bins
    ]
    _write_csv(path, "bin_lower,bin_upper,count,uncert_mean,var_obs", rows)


def diagram_to_svg(bins, path) -> None:
    """Minimal static rendering: per-bin points plus the identity diagonal."""
    size, margin = 400, 40
    span = size - 2 * margin
    xs = [b.uncert_mean for b in bins]
    ys = [b.var_obs for b in bins]
    hi = max(xs + ys) if bins else 1.0
    hi = hi if hi > 0 else 1.0

    def px(v):
        return margin + span * v / hi

    def py(v):
        return size - margin - span * v / hi

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{margin}" y1="{size - margin}" x2="{size - margin}" y2="{margin}" '
        'stroke="gray" stroke-dasharray="6,4"/>',
        f'<line x1="{margin}" y1="{size - margin}" x2="{size - margin}" y2="{size - margin}" '
        'stroke="black"/>',
        f'<line x1="{margin}" y1="{size - margin}" x2="{margin}" y2="{margin}" stroke="black"/>',
    ]
    for b in bins:
        parts.append(
            f'<circle cx="{px(b.uncert_mean):.2f}" cy="{py(b.var_obs):.2f}" r="4" '
            'fill="steelblue"/>'
        )
    parts.append(
        f'<text x="{size // 2}" y="{size - 8}" text-anchor="middle" font-size="12">'
        "predicted uncertainty</text>"
    )
    parts.append(
        f'<text x="12" y="{size // 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 12 {size // 2})">observed variance</text>'
    )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")
