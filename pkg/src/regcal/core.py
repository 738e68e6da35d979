"""Domain types shared across the toolkit, plus prediction-dump validation.

The universal input is an :class:`McPredictionSet`: for every test sample it
holds the ground truth and N stochastic forward-pass outputs (a mean vector
and the log of the predicted aleatoric variance). Everything downstream
(recalibration, calibration error, intervals, rejection) consumes this one
structure or the per-sample :class:`UncertaintyRecord` summaries derived
from it.

All types are treated as immutable after construction; validation is a pure
function that reports violations instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CALIBRATION_METHODS = ("sigma", "aux", "identity")
LIKELIHOOD_KINDS = ("gaussian", "laplace")
CALIBRATION_TARGETS = ("predictive", "aleatoric_only")


@dataclass
class McSample:
    """One stochastic forward pass: predicted mean and log aleatoric variance."""

    mean: np.ndarray  # shape (d,)
    log_var: float

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.log_var = float(self.log_var)


@dataclass
class McRecord:
    """Ground truth plus the N stochastic outputs for one input."""

    id: str
    y: np.ndarray  # shape (d,)
    samples: list[McSample]

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)


@dataclass
class McPredictionSet:
    """Monte-Carlo prediction dump: m records, each with N samples of dimension d."""

    d: int
    records: list[McRecord]

    @property
    def m(self) -> int:
        return len(self.records)

    @property
    def n_samples(self) -> int:
        return len(self.records[0].samples) if self.records else 0

    def to_arrays(self):
        """Stack the set into dense arrays.

        Returns:
            ids: list of m record ids.
            y: float array (m, d) of ground-truth targets.
            means: float array (m, N, d) of per-pass predicted means.
            log_vars: float array (m, N) of per-pass log aleatoric variances.
        """
        ids = [r.id for r in self.records]
        y = np.stack([r.y for r in self.records])
        means = np.stack([np.stack([s.mean for s in r.samples]) for r in self.records])
        log_vars = np.array([[s.log_var for s in r.samples] for r in self.records])
        return ids, y, means, log_vars


@dataclass
class UncertaintyRecord:
    """Per-sample predictive summary: MC mean and decomposed variance.

    Invariant: total == epistemic + aleatoric exactly (total is always
    computed as the sum, never stored independently).
    """

    id: str
    y: np.ndarray
    y_mean: np.ndarray
    epistemic: float
    aleatoric: float
    total: float


@dataclass
class CalibrationArtifact:
    """A fitted recalibration: a positive scalar s, a small network, or a no-op.

    ``aux_weights`` is a flat parameter vector; ``aux_shapes`` maps layer
    names (w1, b1, w2, b2) to shapes so the vector can be unflattened.
    """

    method: str  # sigma | aux | identity
    likelihood: str = "gaussian"
    target: str = "predictive"
    s: float | None = None
    aux_weights: np.ndarray | None = None
    aux_shapes: dict[str, tuple[int, ...]] | None = None
    fit_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in CALIBRATION_METHODS:
            raise ValueError(f"unknown calibration method {self.method!r}")
        if self.likelihood not in LIKELIHOOD_KINDS:
            raise ValueError(f"unknown likelihood {self.likelihood!r}")
        if self.target not in CALIBRATION_TARGETS:
            raise ValueError(f"unknown calibration target {self.target!r}")
        if self.method == "sigma":
            if self.s is None or not (self.s > 0):
                raise ValueError(f"sigma calibration requires s > 0, got {self.s}")
        if self.method == "aux":
            if self.aux_weights is None or self.aux_shapes is None:
                raise ValueError("aux calibration requires weights and shapes")
            expected = sum(int(np.prod(sh)) for sh in self.aux_shapes.values())
            if len(self.aux_weights) != expected:
                raise ValueError(
                    f"aux weight vector has {len(self.aux_weights)} entries, "
                    f"shapes require {expected}"
                )

    @property
    def hidden_width(self) -> int | None:
        if self.aux_shapes is None:
            return None
        return int(self.aux_shapes["b1"][0])


def identity_artifact(likelihood: str = "gaussian", target: str = "predictive") -> CalibrationArtifact:
    """Artifact whose application is a no-op."""
    return CalibrationArtifact(method="identity", likelihood=likelihood, target=target)


@dataclass
class BinStats:
    """Statistics of one calibration bin over uncertainty values."""

    k: int
    lower: float
    upper: float
    count: int
    var_obs: float  # mean observed squared deviation in the bin
    uncert_mean: float  # mean predicted uncertainty in the bin


def _is_finite_vector(x: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(x)))


def validate(pset: McPredictionSet) -> list[str]:
    """Check all set/record/sample invariants; return a list of violations.

    An empty list means the set is well formed. Each violation names the
    offending record id and field. Never raises.
    """
    violations: list[str] = []
    if pset.d < 1:
        violations.append(f"set: d must be >= 1 (got {pset.d})")
    if pset.m < 1:
        violations.append("set: no records (m must be >= 1)")
        return violations

    n_expected = len(pset.records[0].samples)
    for rec in pset.records:
        rid = rec.id
        if len(rec.samples) < 1:
            violations.append(f"record '{rid}': no samples (N must be >= 1)")
            continue
        if len(rec.samples) != n_expected:
            violations.append(
                f"record '{rid}': inconsistent N "
                f"(expected {n_expected}, got {len(rec.samples)})"
            )
        if rec.y.shape != (pset.d,):
            violations.append(
                f"record '{rid}': y has length {rec.y.shape}, expected ({pset.d},)"
            )
        elif not _is_finite_vector(rec.y):
            violations.append(f"record '{rid}': non-finite y")
        for j, s in enumerate(rec.samples):
            if s.mean.shape != (pset.d,):
                violations.append(
                    f"record '{rid}': sample {j} mean has length "
                    f"{s.mean.shape}, expected ({pset.d},)"
                )
            elif not _is_finite_vector(s.mean):
                violations.append(f"record '{rid}': non-finite mean in sample {j}")
            if not math.isfinite(s.log_var):
                violations.append(f"record '{rid}': non-finite log_var in sample {j}")
    return violations
