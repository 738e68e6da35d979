"""Fit and apply recalibration of predictive uncertainty.

Two families are supported:

* sigma scaling: a single scalar s multiplies the predictive standard
  deviation, i.e. variances are multiplied by s^2. Fitted either in closed
  form or by gradient descent on the scaled NLL objective; both routes agree.
* aux scaling: a small two-layer ReLU network mapping log(uncertainty) to
  log(recalibrated uncertainty), fitted by gradient descent on the Gaussian
  NLL with the predictions held fixed at the MC mean.

Neither method touches predicted means, so accuracy (MSE) is conserved
bit-for-bit by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import CalibrationArtifact, McPredictionSet, UncertaintyRecord
from .metrics import uncertainty_records


class CalibrationError(ValueError):
    pass


@dataclass
class SigmaFitOptions:
    """Hyperparameters for the gradient-descent sigma fit."""

    max_iters: int = 1000
    step_size: float = 0.01
    tolerance: float = 1e-8  # stop when |delta s| falls below this
    init_s: float = 1.0

    def __post_init__(self):
        if self.max_iters <= 0 or self.step_size <= 0 or self.tolerance <= 0 or self.init_s <= 0:
            raise ValueError("all sigma fit options must be positive")


@dataclass
class AuxConfig:
    """Hyperparameters for the auxiliary recalibration network."""

    hidden_width: int = 16
    seed: int = 0
    epochs: int = 500
    step_size: float = 3e-4

    def __post_init__(self):
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")
        if self.epochs <= 0 or self.step_size <= 0:
            raise ValueError("epochs and step_size must be positive")


def _as_positive_arrays(errors, scales, scale_name: str):
    errors = np.asarray(errors, dtype=float)
    scales = np.asarray(scales, dtype=float)
    if errors.shape != scales.shape:
        raise ValueError(
            f"length mismatch: {len(errors)} errors vs {len(scales)} {scale_name}"
        )
    if errors.size == 0:
        raise ValueError("empty input: need at least one record to fit s")
    if np.any(scales <= 0):
        raise ValueError(f"all {scale_name} must be > 0")
    if np.any(errors < 0):
        raise ValueError("errors must be >= 0")
    return errors, scales


def sigma_closed_form_gaussian(errors_sq, variances) -> float:
    """Closed-form scale for the Gaussian objective.

    s = sqrt( mean_i errors_sq_i / variances_i ); the positive root. Returns
    exactly 1 when errors_sq == variances elementwise (already calibrated).
    """
    errors_sq, variances = _as_positive_arrays(errors_sq, variances, "variances")
    return float(np.sqrt(np.mean(errors_sq / variances)))


def sigma_closed_form_laplace(abs_errors, sigmas) -> float:
    """Closed-form scale for the Laplacian objective: mean of |err|/sigma."""
    abs_errors, sigmas = _as_positive_arrays(abs_errors, sigmas, "sigmas")
    return float(np.mean(abs_errors / sigmas))


def _sigma_objective(s: float, m: int, ratio_sum: float, kind: str) -> float:
    if kind == "gaussian":
        return m * math.log(s) + 0.5 * ratio_sum / (s * s)
    return m * math.log(s) + ratio_sum / s


def sigma_fit_gd(
    errors,
    scales,
    kind: str = "gaussian",
    opts: SigmaFitOptions | None = None,
):
    """Fit the scalar s by gradient descent on the scaled-NLL objective.

    ``errors``/``scales`` are squared errors and variances for the Gaussian
    kind, absolute errors and sigmas for the Laplacian kind. The search runs
    over rho = log(s), which keeps s positive without constraints; steps are
    clipped to 0.5 in rho so far-off starts cannot overshoot. Iteration
    stops when |delta s| drops below ``opts.tolerance`` or ``opts.max_iters``
    is reached (fit_meta records which).

    Returns:
        (s, fit_meta) with fit_meta holding iterations, final objective and
        a converged flag.
    """
    if kind not in ("gaussian", "laplace"):
        raise ValueError(f"unknown likelihood kind {kind!r}")
    opts = opts or SigmaFitOptions()
    errors, scales = _as_positive_arrays(
        errors, scales, "variances" if kind == "gaussian" else "sigmas"
    )
    m = len(errors)
    ratio_sum = float(np.sum(errors / scales))  # sum of err^2/var or |err|/sigma
    ratio_mean = ratio_sum / m

    rho = math.log(opts.init_s)
    s = opts.init_s
    converged = False
    iters = 0
    for iters in range(1, opts.max_iters + 1):
        # Normalized gradient of the objective w.r.t. rho (divided by m).
        if kind == "gaussian":
            grad = 1.0 - math.exp(-2.0 * rho) * ratio_mean
        else:
            grad = 1.0 - math.exp(-rho) * ratio_mean
        step = opts.step_size * grad
        step = max(-0.5, min(0.5, step))
        rho -= step
        s_new = math.exp(rho)
        if not math.isfinite(s_new):
            raise CalibrationError(
                "sigma fit diverged to a non-finite scale; try a smaller step size"
            )
        delta = abs(s_new - s)
        s = s_new
        if delta < opts.tolerance:
            converged = True
            break
    fit_meta = {
        "iterations": iters,
        "final_objective": _sigma_objective(s, m, ratio_sum, kind),
        "converged": converged,
    }
    return s, fit_meta


def _errors_and_scales(pset: McPredictionSet, likelihood: str, target: str):
    """Per-record observed error and predicted scale used by the sigma fit.

    Errors are those of the MC-mean prediction (mean across output
    dimensions, matching the scalar uncertainty). Predictive targets plug in
    the total uncertainty, aleatoric-only targets only the aleatoric part.
    """
    records = uncertainty_records(pset)
    u = np.array([r.total if target == "predictive" else r.aleatoric for r in records])
    resid = np.stack([r.y - r.y_mean for r in records])
    if likelihood == "gaussian":
        errors = np.mean(resid**2, axis=1)
        scales = u
    else:
        errors = np.mean(np.abs(resid), axis=1)
        scales = np.sqrt(u)
    return errors, scales


def fit_sigma(
    pset: McPredictionSet,
    likelihood: str = "gaussian",
    target: str = "predictive",
    opts: SigmaFitOptions | None = None,
    use_gd: bool = False,
) -> CalibrationArtifact:
    """Fit a sigma-scaling artifact on a calibration set.

    Uses the exact closed form by default; ``use_gd`` switches to the
    gradient-descent route (the two agree to the fit tolerance).
    """
    errors, scales = _errors_and_scales(pset, likelihood, target)
    if use_gd:
        s, fit_meta = sigma_fit_gd(errors, scales, kind=likelihood, opts=opts)
        fit_meta = {"fit": "gd", **fit_meta}
    else:
        if likelihood == "gaussian":
            s = sigma_closed_form_gaussian(errors, scales)
        else:
            s = sigma_closed_form_laplace(errors, scales)
        m = len(errors)
        fit_meta = {
            "fit": "closed_form",
            "iterations": 0,
            "final_objective": _sigma_objective(s, m, float(np.sum(errors / scales)), likelihood),
        }
    fit_meta["m"] = len(errors)
    return CalibrationArtifact(
        method="sigma", likelihood=likelihood, target=target, s=s, fit_meta=fit_meta
    )


# -- auxiliary recalibration network ---------------------------------------

AUX_LAYER_NAMES = ("w1", "b1", "w2", "b2")


def aux_shapes(hidden_width: int) -> dict[str, tuple[int, ...]]:
    return {
        "w1": (hidden_width,),
        "b1": (hidden_width,),
        "w2": (hidden_width,),
        "b2": (1,),
    }


def _unflatten(weights: np.ndarray, shapes: dict[str, tuple[int, ...]]):
    params = {}
    pos = 0
    for name in AUX_LAYER_NAMES:
        size = int(np.prod(shapes[name]))
        params[name] = np.asarray(weights[pos : pos + size], dtype=float).reshape(shapes[name])
        pos += size
    return params


def _flatten(params: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(params[name]) for name in AUX_LAYER_NAMES])


def aux_forward(x: np.ndarray, params: dict[str, np.ndarray]) -> np.ndarray:
    """Map log-uncertainty to recalibrated log-uncertainty.

    R(x) = x + w2 . relu(w1 * x + b1) + b2. The skip connection makes the
    map exactly the identity when w2 and b2 are zero, which is (close to)
    the initialization.
    """
    z = np.outer(x, params["w1"]) + params["b1"]  # (m, h)
    a = np.maximum(z, 0.0)
    return x + a @ params["w2"] + params["b2"][0]


def aux_fit(
    cal_set: McPredictionSet,
    cfg: AuxConfig | None = None,
    target: str = "predictive",
) -> CalibrationArtifact:
    """Fit the two-layer auxiliary recalibration network.

    The network is trained full-batch by gradient descent to minimize the
    Gaussian NLL (constants dropped) of the calibration set with predictions
    fixed at the MC mean and the variance replaced by exp(R(log u)). The
    returned weights are the best seen during training, so the training NLL
    at the artifact is never above the NLL of the near-identity init.
    """
    cfg = cfg or AuxConfig()
    records = uncertainty_records(cal_set)
    u = np.array([r.total if target == "predictive" else r.aleatoric for r in records])
    resid = np.stack([r.y - r.y_mean for r in records])
    err_sq = np.mean(resid**2, axis=1)
    x = np.log(u)
    m = len(x)

    rng = np.random.default_rng(cfg.seed)
    h = cfg.hidden_width
    params = {
        "w1": rng.standard_normal(h),
        "b1": np.zeros(h),
        "w2": rng.standard_normal(h) * 0.01,  # small: start near the identity map
        "b2": np.zeros(1),
    }

    def loss_of(g: np.ndarray) -> float:
        return float(np.mean(np.exp(-g) * err_sq + g))

    best_params = {k: v.copy() for k, v in params.items()}
    g0 = aux_forward(x, params)
    best_loss = loss_of(g0)
    init_loss = best_loss

    lr = cfg.step_size
    for epoch in range(1, cfg.epochs + 1):
        z = np.outer(x, params["w1"]) + params["b1"]
        a = np.maximum(z, 0.0)
        g = x + a @ params["w2"] + params["b2"][0]
        loss = loss_of(g)
        if not math.isfinite(loss):
            raise CalibrationError(f"non-finite aux training loss at epoch {epoch}")
        dg = (1.0 - np.exp(-g) * err_sq) / m  # (m,)
        grad_w2 = a.T @ dg
        grad_b2 = np.array([dg.sum()])
        dz = np.outer(dg, params["w2"]) * (z > 0.0)
        grad_w1 = x @ dz
        grad_b1 = dz.sum(axis=0)
        params["w1"] -= lr * grad_w1
        params["b1"] -= lr * grad_b1
        params["w2"] -= lr * grad_w2
        params["b2"] -= lr * grad_b2
        g = aux_forward(x, params)
        loss = loss_of(g)
        if math.isfinite(loss) and loss < best_loss:
            best_loss = loss
            best_params = {k: v.copy() for k, v in params.items()}

    shapes = aux_shapes(h)
    return CalibrationArtifact(
        method="aux",
        likelihood="gaussian",
        target=target,
        aux_weights=_flatten(best_params),
        aux_shapes=shapes,
        fit_meta={
            "epochs": cfg.epochs,
            "step_size": cfg.step_size,
            "seed": cfg.seed,
            "initial_objective": init_loss,
            "final_objective": best_loss,
            "m": m,
        },
    )


# -- applying artifacts -----------------------------------------------------


def apply_calibration(
    data: McPredictionSet | list[UncertaintyRecord],
    calib: CalibrationArtifact | None,
    expect_target: str | None = None,
) -> list[UncertaintyRecord]:
    """Recalibrate per-sample uncertainties; predictions stay untouched.

    Accepts either a prediction set (decomposed first) or already-derived
    uncertainty records. sigma scaling multiplies variances by s^2
    (both summands proportionally in predictive mode, only the aleatoric
    part in aleatoric-only mode); aux scaling maps the targeted variance
    through exp(R(log u)). ``y_mean`` arrays are passed through unchanged,
    so means are bit-identical to the input.

    ``expect_target`` guards pipelines that require a particular
    calibration target; a mismatch raises :class:`CalibrationError`.
    """
    if isinstance(data, McPredictionSet):
        records = uncertainty_records(data)
    else:
        records = list(data)
    if calib is None or calib.method == "identity":
        return records
    if expect_target is not None and calib.target != expect_target:
        raise CalibrationError(
            f"artifact target {calib.target!r} does not match requested {expect_target!r}"
        )

    if calib.method == "sigma":
        factor = calib.s * calib.s
        out = []
        for r in records:
            if calib.target == "predictive":
                epi = factor * r.epistemic
                alea = factor * r.aleatoric
            else:
                epi = r.epistemic
                alea = factor * r.aleatoric
            out.append(
                UncertaintyRecord(
                    id=r.id, y=r.y, y_mean=r.y_mean,
                    epistemic=epi, aleatoric=alea, total=epi + alea,
                )
            )
        return out

    # aux
    params = _unflatten(calib.aux_weights, calib.aux_shapes)
    out = []
    if calib.target == "predictive":
        totals = np.array([r.total for r in records])
        new_totals = np.exp(aux_forward(np.log(totals), params))
        for r, t_new in zip(records, new_totals):
            ratio = t_new / r.total
            epi = ratio * r.epistemic
            alea = t_new - epi  # keeps total == epistemic + aleatoric exact
            out.append(
                UncertaintyRecord(
                    id=r.id, y=r.y, y_mean=r.y_mean,
                    epistemic=float(epi), aleatoric=float(alea), total=float(epi + alea),
                )
            )
    else:
        aleas = np.array([r.aleatoric for r in records])
        new_aleas = np.exp(aux_forward(np.log(aleas), params))
        for r, a_new in zip(records, new_aleas):
            out.append(
                UncertaintyRecord(
                    id=r.id, y=r.y, y_mean=r.y_mean,
                    epistemic=r.epistemic, aleatoric=float(a_new),
                    total=float(r.epistemic + a_new),
                )
            )
    return out
