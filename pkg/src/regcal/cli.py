"""Command-line surface: fit/apply calibration, evaluate, export curves.

Every subcommand is a pure function of its inputs, flags and seed: repeated
invocations write byte-identical outputs. On failure a single
machine-parsable line ``error: <code>: <message>`` goes to stderr and the
exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io as rio
from .analysis import ood_compare, rejection_curve
from .calibrate import (
    AuxConfig,
    CalibrationError,
    SigmaFitOptions,
    apply_calibration,
    aux_fit,
    fit_sigma,
)
from .core import identity_artifact, validate
from .intervals import DEFAULT_LEVELS, coverage
from .likelihood import batch_nll
from .metrics import DEFAULT_BINS, calibration_diagram, mse, uce
from .toymodel import (
    SyntheticSpec,
    generate,
    intra_training_calibrate,
    mc_predict,
    toy_experiment_config,
    train,
)


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line errors instead of usage dumps
        raise CliError("usage", message)


def _load_set(path):
    pset = rio.load_dump(path)
    problems = validate(pset)
    if problems:
        raise CliError("dump-format", "; ".join(problems))
    return pset


def _load_calib(path):
    if path is None:
        return identity_artifact()
    return rio.load_artifact(path)


def _target(flag: str) -> str:
    return "aleatoric_only" if flag == "aleatoric" else flag


def cmd_calibrate(args) -> int:
    pset = _load_set(args.input)
    target = _target(args.target)
    if args.method == "sigma":
        opts = SigmaFitOptions(
            max_iters=args.iters if args.iters is not None else 1000,
            step_size=args.lr if args.lr is not None else 0.01,
        )
        calib = fit_sigma(pset, likelihood=args.likelihood, target=target,
                          opts=opts, use_gd=args.gd)
    else:
        if args.likelihood != "gaussian":
            raise CliError("invalid-flag", "aux calibration supports the gaussian likelihood only")
        cfg = AuxConfig(
            hidden_width=args.hidden,
            seed=args.seed,
            epochs=args.iters if args.iters is not None else 500,
            step_size=args.lr if args.lr is not None else 3e-4,
        )
        calib = aux_fit(pset, cfg, target=target)
    rio.save_artifact(calib, args.out)
    return 0


def _evaluate_report(pset, calib, bins: int, input_path: str) -> dict:
    records = apply_calibration(pset, calib)
    rep_pred = uce(pset, k=bins, mode="predictive", calib=calib)
    rep_alea = uce(pset, k=bins, mode="aleatoric_only", calib=calib)
    return {
        "m": pset.m,
        "d": pset.d,
        "n_samples": pset.n_samples,
        "mse": mse(records),
        "nll": batch_nll(pset, calib, kind="gaussian"),
        "uce_predictive": rep_pred.to_dict(),
        "uce_aleatoric_only": rep_alea.to_dict(),
        "provenance": {
            "input": input_path,
            "bins": bins,
            "calibration": rio.artifact_to_json(calib),
            "bin_range": "equal-width bins over [min, max] of evaluated uncertainties",
        },
    }


def _write_json(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def cmd_evaluate(args) -> int:
    pset = _load_set(args.input)
    calib = _load_calib(args.calib)
    report = _evaluate_report(pset, calib, args.bins, args.input)
    _write_json(report, args.out)
    if args.diagram:
        bins = calibration_diagram(pset, k=args.bins, mode="predictive", calib=calib)
        rio.diagram_to_csv(bins, args.diagram)
    if args.svg:
        bins = calibration_diagram(pset, k=args.bins, mode="predictive", calib=calib)
        rio.diagram_to_svg(bins, args.svg)
    return 0


def cmd_intervals(args) -> int:
    pset = _load_set(args.input)
    calib = _load_calib(args.calib)
    try:
        levels = [float(tok) for tok in args.levels.split(",") if tok]
    except ValueError:
        raise CliError("invalid-flag", f"could not parse levels {args.levels!r}")
    records = apply_calibration(pset, calib)
    table = coverage(records, levels)
    rio.coverage_to_csv(table, args.out)
    return 0


def cmd_reject(args) -> int:
    pset = _load_set(args.input)
    calib = _load_calib(args.calib)
    records = apply_calibration(pset, calib)
    thresholds = None
    if args.thresholds:
        try:
            thresholds = [float(tok) for tok in args.thresholds.split(",") if tok]
        except ValueError:
            raise CliError("invalid-flag", f"could not parse thresholds {args.thresholds!r}")
    curve = rejection_curve(records, steps=args.steps, thresholds=thresholds)
    rio.rejection_to_csv(curve, args.out)
    return 0


def cmd_ood(args) -> int:
    pset_in = _load_set(args.in_dist)
    pset_sh = _load_set(args.shifted)
    calib = _load_calib(args.calib)
    rec_in = apply_calibration(pset_in, calib)
    rec_sh = apply_calibration(pset_sh, calib)
    comparison = ood_compare(rec_in, rec_sh, k=args.bins)
    rio.ood_to_csv(comparison, args.out)
    return 0


def cmd_toy(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    spec = SyntheticSpec(seed=seed)
    cfg = toy_experiment_config(seed)
    if args.epochs is not None:
        cfg.epochs = args.epochs
    if args.mc_passes is not None:
        cfg.mc_passes = args.mc_passes
    data = generate(spec)
    model, trace = train(data, cfg)
    intra_training_calibrate(trace)

    dumps = {}
    for i, (name, split) in enumerate(
        (("train", data.train), ("val", data.val), ("test", data.test)), start=1
    ):
        pset = mc_predict(model, split, n_passes=cfg.mc_passes, seed=seed + i, id_prefix=name)
        rio.save_dump(pset, out_dir / f"{name}.jsonl")
        dumps[name] = pset
    rio.trace_to_csv(trace, out_dir / "trace.csv")

    sigma_calib = fit_sigma(dumps["val"], likelihood="gaussian", target="predictive")
    aux_calib = aux_fit(dumps["val"], AuxConfig(seed=seed), target="predictive")
    rio.save_artifact(sigma_calib, out_dir / "calib_sigma.json")
    rio.save_artifact(aux_calib, out_dir / "calib_aux.json")

    test = dumps["test"]
    summary = {
        "seed": seed,
        "epochs": cfg.epochs,
        "mc_passes": cfg.mc_passes,
        "interval_membership": "joint",
        "test": {},
    }
    for name, calib in (("none", None), ("sigma", sigma_calib), ("aux", aux_calib)):
        records = apply_calibration(test, calib)
        table = coverage(records, DEFAULT_LEVELS)
        entry = {
            "mse": mse(records),
            "nll": batch_nll(test, calib, kind="gaussian"),
            "uce_predictive": uce(test, k=DEFAULT_BINS, mode="predictive", calib=calib).uce,
            "uce_aleatoric_only": uce(
                test, k=DEFAULT_BINS, mode="aleatoric_only", calib=calib
            ).uce,
            "coverage": {repr(g): obs for g, _, obs in table.rows()},
        }
        if name == "sigma":
            entry["s"] = sigma_calib.s
        summary["test"][name] = entry
    _write_json(summary, out_dir / "summary.json")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="regcal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit a recalibration artifact on a dump")
    p.add_argument("--input", required=True)
    p.add_argument("--method", required=True, choices=["sigma", "aux"])
    p.add_argument("--likelihood", default="gaussian", choices=["gaussian", "laplace"])
    p.add_argument("--target", default="predictive", choices=["predictive", "aleatoric"])
    p.add_argument("--out", required=True)
    p.add_argument("--h", dest="hidden", type=int, default=16, help="aux hidden width")
    p.add_argument("--iters", type=int, help="gd iterations / aux epochs")
    p.add_argument("--lr", type=float, help="gd / aux step size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gd", action="store_true", help="fit sigma by gradient descent")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="MSE/NLL/UCE report for a dump")
    p.add_argument("--input", required=True)
    p.add_argument("--calib")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--out", required=True)
    p.add_argument("--diagram", help="write calibration-diagram CSV here")
    p.add_argument("--svg", help="write a minimal SVG calibration diagram here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("intervals", help="prediction-interval coverage table")
    p.add_argument("--input", required=True)
    p.add_argument("--calib")
    p.add_argument("--levels", default=",".join(str(g) for g in DEFAULT_LEVELS))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_intervals)

    p = sub.add_parser("reject", help="uncertainty-threshold rejection curve")
    p.add_argument("--input", required=True)
    p.add_argument("--calib")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--thresholds", help="comma-separated absolute thresholds (overrides --steps)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reject)

    p = sub.add_parser("ood", help="uncertainty histograms for two dumps")
    p.add_argument("--in-dist", dest="in_dist", required=True)
    p.add_argument("--shifted", required=True)
    p.add_argument("--calib")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ood)

    p = sub.add_parser("toy", help="end-to-end synthetic MC-dropout experiment")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--epochs", type=int, help="override training epochs")
    p.add_argument("--mc-passes", dest="mc_passes", type=int)
    p.set_defaults(func=cmd_toy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 2
    except rio.DumpFormatError as exc:
        print(f"error: dump-format: {exc}", file=sys.stderr)
        return 1
    except CalibrationError as exc:
        print(f"error: calibration: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: invalid-input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
