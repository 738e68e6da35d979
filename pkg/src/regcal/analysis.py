"""Rejection of unreliable predictions and out-of-distribution comparison.

Rejecting every prediction whose total uncertainty exceeds a threshold
should lower the MSE over the kept records when uncertainty is informative.
The default sweep walks uncertainty quantiles rather than absolute
thresholds so curves are comparable across calibrations (a scale factor on
the uncertainties leaves quantile membership untouched); an absolute-
threshold mode is available for data on a known scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import UncertaintyRecord


@dataclass
class RejectionCurve:
    """MSE over kept records per uncertainty threshold.

    ``mse_kept`` entries are NaN where a threshold keeps zero records
    (possible only with user-supplied absolute thresholds); they are marked
    undefined rather than fabricated.
    """

    thresholds: np.ndarray
    mse_kept: np.ndarray
    frac_rejected: np.ndarray
    sweep: str = "quantile"  # or "absolute"


@dataclass
class HistogramSummary:
    mean: float
    median: float
    q90: float


@dataclass
class UncertaintyHistogram:
    """Histogram of per-record uncertainties on shared edges."""

    edges: np.ndarray  # K+1 edges
    counts: np.ndarray  # K counts, summing to m
    summary: HistogramSummary


@dataclass
class OodComparison:
    in_dist: UncertaintyHistogram
    shifted: UncertaintyHistogram
    mean_diff: float  # mean(shifted) - mean(in_dist)
    auroc: float  # of thresholding uncertainty to separate the two sets


def rejection_curve(
    records: list[UncertaintyRecord],
    steps: int = 50,
    thresholds=None,
) -> RejectionCurve:
    """Sweep uncertainty thresholds, keeping records with total <= threshold.

    With the default quantile sweep the thresholds are the uncertainty
    quantiles at ``steps`` equally spaced fractions in (0, 1]; the final
    entry keeps everything and reproduces the plain MSE exactly. Passing
    explicit ``thresholds`` switches to absolute mode.
    """
    if not records:
        raise ValueError("rejection curve of an empty record sequence")
    totals = np.array([r.total for r in records])
    err_sq = np.array([float(np.mean((r.y - r.y_mean) ** 2)) for r in records])
    m = len(records)

    if thresholds is None:
        if steps < 2:
            raise ValueError(f"steps must be >= 2 (got {steps})")
        fractions = np.arange(1, steps + 1) / steps
        thresholds = np.quantile(totals, fractions)
        sweep = "quantile"
    else:
        thresholds = np.asarray(thresholds, dtype=float)
        sweep = "absolute"

    mse_kept = np.empty(len(thresholds))
    frac_rejected = np.empty(len(thresholds))
    for i, t in enumerate(thresholds):
        kept = totals <= t
        n_kept = int(kept.sum())
        frac_rejected[i] = 1.0 - n_kept / m
        mse_kept[i] = float(err_sq[kept].mean()) if n_kept else float("nan")
    return RejectionCurve(
        thresholds=np.asarray(thresholds, dtype=float),
        mse_kept=mse_kept,
        frac_rejected=frac_rejected,
        sweep=sweep,
    )


def _summary(u: np.ndarray) -> HistogramSummary:
    return HistogramSummary(
        mean=float(np.mean(u)),
        median=float(np.median(u)),
        q90=float(np.quantile(u, 0.9)),
    )


def _auroc(negatives: np.ndarray, positives: np.ndarray) -> float:
    """Probability a positive outranks a negative (ties count half).

    Rank-based Mann-Whitney formulation; identical to the O(n^2) pairwise
    count but usable at realistic sizes.
    """
    combined = np.concatenate([negatives, positives])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(len(combined))
    ranks[order] = np.arange(1, len(combined) + 1)
    # average ranks over ties
    sorted_vals = combined[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    n_neg = len(negatives)
    n_pos = len(positives)
    rank_sum_pos = float(ranks[n_neg:].sum())
    u_stat = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u_stat / (n_pos * n_neg)


def ood_compare(
    in_dist: list[UncertaintyRecord],
    shifted: list[UncertaintyRecord],
    k: int = 20,
) -> OodComparison:
    """Compare uncertainty histograms of an in-distribution and a shifted set.

    Both histograms share k equal-width bins over the union's [min, max].
    Separation statistics: difference of means and the AUROC of thresholding
    uncertainty to tell the sets apart (0.5 = indistinguishable).
    """
    if not in_dist or not shifted:
        raise ValueError("ood comparison requires two non-empty record sequences")
    if k < 1:
        raise ValueError(f"bin count must be >= 1 (got {k})")
    u_in = np.array([r.total for r in in_dist])
    u_sh = np.array([r.total for r in shifted])
    lo = float(min(u_in.min(), u_sh.min()))
    hi = float(max(u_in.max(), u_sh.max()))
    if hi == lo:
        hi = lo + 1.0  # degenerate: all mass lands in the first bin
    edges = np.linspace(lo, hi, k + 1)
    counts_in, _ = np.histogram(u_in, bins=edges)
    counts_sh, _ = np.histogram(u_sh, bins=edges)
    return OodComparison(
        in_dist=UncertaintyHistogram(edges=edges, counts=counts_in, summary=_summary(u_in)),
        shifted=UncertaintyHistogram(edges=edges, counts=counts_sh, summary=_summary(u_sh)),
        mean_diff=float(u_sh.mean() - u_in.mean()),
        auroc=_auroc(u_in, u_sh),
    )
