"""Predictive-variance decomposition, uncertainty calibration error, and MSE.

The calibration error follows the binning recipe used for classification
calibration: uncertainties are partitioned into K equal-width bins over
their observed range and the bin-weighted absolute gap between observed
squared deviation and mean predicted uncertainty is accumulated. The result
is reported in percent (x100).

Bin-range decision: bins span [min, max] of the uncertainties actually seen
on the evaluation set, not a fixed [0, 1]. The |B_k|/m weighting makes fixed
empty tails irrelevant, and data-dependent axes match how calibration
diagrams are read. The last bin is upper-edge inclusive; ties at interior
edges go to the higher bin, so every record lands in exactly one bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BinStats, CalibrationArtifact, McPredictionSet, McRecord, UncertaintyRecord

UCE_MODES = ("predictive", "aleatoric_only")

DEFAULT_BINS = 10


@dataclass
class UceReport:
    """Calibration-error summary plus the per-bin statistics behind it."""

    uce: float  # in percent
    bins: list[BinStats]
    num_bins: int
    mode: str
    m: int

    def to_dict(self) -> dict:
        return {
            "uce": self.uce,
            "num_bins": self.num_bins,
            "mode": self.mode,
            "m": self.m,
            "bins": [
                {
                    "k": b.k,
                    "lower": b.lower,
                    "upper": b.upper,
                    "count": b.count,
                    "var_obs": b.var_obs,
                    "uncert_mean": b.uncert_mean,
                }
                for b in self.bins
            ],
        }


def predictive_variance(record: McRecord) -> UncertaintyRecord:
    """Decompose one record's MC samples into epistemic/aleatoric/total.

    Epistemic is the population (1/N) variance of the sample means, computed
    per output dimension and averaged across the d outputs; aleatoric is the
    mean of exp(log_var) over passes; total is their sum.
    """
    means = np.stack([s.mean for s in record.samples])  # (N, d)
    log_vars = np.array([s.log_var for s in record.samples])
    y_mean = means.mean(axis=0)
    epistemic = float(np.mean((means - y_mean) ** 2))
    aleatoric = float(np.mean(np.exp(log_vars)))
    return UncertaintyRecord(
        id=record.id,
        y=record.y,
        y_mean=y_mean,
        epistemic=epistemic,
        aleatoric=aleatoric,
        total=epistemic + aleatoric,
    )


def uncertainty_records(pset: McPredictionSet) -> list[UncertaintyRecord]:
    """Decompose every record of a set (uncalibrated)."""
    return [predictive_variance(r) for r in pset.records]


def mse(records: list[UncertaintyRecord]) -> float:
    """Mean over records of the mean-over-d squared error of the MC mean."""
    if not records:
        raise ValueError("mse of an empty record sequence")
    return float(np.mean([np.mean((r.y - r.y_mean) ** 2) for r in records]))


def _bin_assignment(u: np.ndarray, k: int):
    """Assign each uncertainty to one of k equal-width bins over [min, max].

    Returns (indices, edges). When all values are identical the partition
    collapses to a single degenerate bin (edges [lo, lo]) holding every
    record; callers detect this via edges[0] == edges[-1].
    """
    lo = float(u.min())
    hi = float(u.max())
    if hi == lo:
        return np.zeros(len(u), dtype=int), np.array([lo, hi])
    idx = np.floor((u - lo) / (hi - lo) * k).astype(int)
    np.clip(idx, 0, k - 1, out=idx)
    edges = np.linspace(lo, hi, k + 1)
    return idx, edges


def _observed_sq(pset: McPredictionSet, mode: str) -> np.ndarray:
    """Per-record observed squared deviation used as the calibration target.

    predictive mode keeps the per-MC-sample deviations about the ground
    truth (second moment over passes); aleatoric_only uses the squared error
    of the MC-mean prediction. Both are means across output dimensions.
    """
    out = np.empty(pset.m)
    for i, rec in enumerate(pset.records):
        if mode == "predictive":
            means = np.stack([s.mean for s in rec.samples])  # (N, d)
            out[i] = float(np.mean((means - rec.y) ** 2))
        else:
            y_mean = np.mean(np.stack([s.mean for s in rec.samples]), axis=0)
            out[i] = float(np.mean((y_mean - rec.y) ** 2))
    return out


def uce(
    pset: McPredictionSet,
    k: int = DEFAULT_BINS,
    mode: str = "predictive",
    calib: CalibrationArtifact | None = None,
) -> UceReport:
    """Expected uncertainty calibration error over k equal-width bins.

    The operation takes the full prediction set (not just per-record
    summaries) because the predictive-mode observed variance incorporates
    the raw MC samples. ``calib`` recalibrates the uncertainties used for
    binning and for the per-bin predicted mean; the observed deviations are
    untouched (calibration never moves predictions).

    Returns a report whose ``uce`` field is in percent.
    """
    if mode not in UCE_MODES:
        raise ValueError(f"unknown uce mode {mode!r}")
    if k < 1:
        raise ValueError(f"bin count must be >= 1 (got {k})")
    if pset.m < 1:
        raise ValueError("uce of an empty set")
    from .calibrate import apply_calibration

    records = apply_calibration(pset, calib)
    if mode == "predictive":
        u = np.array([r.total for r in records])
    else:
        u = np.array([r.aleatoric for r in records])
    obs = _observed_sq(pset, mode)

    idx, edges = _bin_assignment(u, k)
    m = pset.m
    if edges[0] == edges[-1]:
        bins = [
            BinStats(
                k=0,
                lower=float(edges[0]),
                upper=float(edges[-1]),
                count=m,
                var_obs=float(obs.mean()),
                uncert_mean=float(u.mean()),
            )
        ]
    else:
        bins = []
        for b in range(k):
            mask = idx == b
            count = int(mask.sum())
            if count:
                var_obs = float(obs[mask].mean())
                uncert_mean = float(u[mask].mean())
            else:
                var_obs = 0.0
                uncert_mean = 0.0
            bins.append(
                BinStats(
                    k=b,
                    lower=float(edges[b]),
                    upper=float(edges[b + 1]),
                    count=count,
                    var_obs=var_obs,
                    uncert_mean=uncert_mean,
                )
            )
    total = 0.0
    for b in bins:
        if b.count:
            total += (b.count / m) * abs(b.var_obs - b.uncert_mean)
    return UceReport(uce=100.0 * total, bins=bins, num_bins=k, mode=mode, m=m)


def calibration_diagram(
    pset: McPredictionSet,
    k: int = DEFAULT_BINS,
    mode: str = "predictive",
    calib: CalibrationArtifact | None = None,
) -> list[BinStats]:
    """Per-bin (predicted uncertainty, observed variance) points for plotting.

    Same binning as :func:`uce`; empty bins are omitted. Points on the
    identity line correspond to perfect calibration.
    """
    report = uce(pset, k=k, mode=mode, calib=calib)
    return [b for b in report.bins if b.count > 0]
