"""Logistic score calibration and two-system fusion.

Two interchangeable strategies are provided:

* per-system affine calibration (scale and bias fitted by prior-weighted
  logistic regression on that system's scores alone), followed by a joint
  fusion stage;
* direct joint fusion, fitting one scale per system plus a shared bias in
  a single logistic model.

Because the joint model is affine in its inputs, any affine pre-maps are
absorbed at the optimum: both strategies converge to the same fused score
function, so their minimum detection costs agree to solver precision.

The fitter maximizes the prior-weighted log-likelihood with damped Newton
iterations. The objective is concave; each iterate is backtracked until it
does not decrease the objective, and convergence is declared when the
gradient infinity-norm drops below 1e-9 (at most 200 iterations,
non-convergence raises).
"""

from dataclasses import dataclass

import numpy as np

from .protocol_io import ScoreSet

GRAD_TOL = 1e-9
MAX_ITERS = 200

__all__ = [
    "AffineCalibration",
    "JointFusionModel",
    "FitError",
    "fit_calibration",
    "apply_affine",
    "fit_joint_fusion",
    "fuse_scores",
    "save_model",
    "load_model",
]


class FitError(ValueError):
    """Calibration fit rejected or failed to converge; message says why."""


@dataclass
class AffineCalibration:
    scale: float
    bias: float


@dataclass
class JointFusionModel:
    a_asv: float
    a_cm: float
    bias: float


def _weighted_logistic_objective(theta, X, y, weights):
    z = X @ theta
    # log sigma(z) = -log1p(exp(-z)) evaluated stably on both tails
    log_p = np.where(z >= 0, -np.log1p(np.exp(-np.abs(z))),
                     z - np.log1p(np.exp(-np.abs(z))))
    log_q = log_p - z  # log(1 - sigma(z))
    obj = np.sum(weights * (y * log_p + (1.0 - y) * log_q))
    p = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)),
                 np.exp(z) / (1.0 + np.exp(z)))
    grad = X.T @ (weights * (y - p))
    hess = -(X.T * (weights * p * (1.0 - p))) @ X
    return obj, grad, hess


def _fit_logistic(X, y, prior_weighting):
    """Damped Newton ascent of the prior-weighted log-likelihood."""
    if not (0.0 < prior_weighting < 1.0):
        raise ValueError("prior_weighting must be in (0, 1)")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise FitError("both classes must be present to fit a calibration")
    weights = np.where(y == 1, prior_weighting / n_pos, (1.0 - prior_weighting) / n_neg)

    theta = np.zeros(X.shape[1])
    obj, grad, hess = _weighted_logistic_objective(theta, X, y, weights)
    for _ in range(MAX_ITERS):
        if np.max(np.abs(grad)) < GRAD_TOL:
            return theta
        # tiny Tikhonov term keeps the solve well-posed on flat directions
        damp = 1e-12 * (1.0 + np.trace(-hess) / X.shape[1])
        step = np.linalg.solve(-hess + damp * np.eye(X.shape[1]), grad)
        scale = 1.0
        while scale > 1e-12:
            cand = theta + scale * step
            cand_obj, cand_grad, cand_hess = _weighted_logistic_objective(
                cand, X, y, weights)
            if cand_obj >= obj:  # Newton iterates must not decrease the objective
                theta, obj, grad, hess = cand, cand_obj, cand_grad, cand_hess
                break
            scale *= 0.5
        else:
            if np.max(np.abs(grad)) < 1e-6:
                return theta  # numerically at the optimum, step underflowed
            raise FitError("logistic fit stalled before reaching the optimum")
    if np.max(np.abs(grad)) < GRAD_TOL:
        return theta
    raise FitError(
        f"logistic fit did not converge in {MAX_ITERS} iterations "
        f"(grad inf-norm {np.max(np.abs(grad)):.3e})"
    )


def fit_calibration(scores, labels, prior_weighting=0.5):
    """Fit sigma(a * s + b) to binary labels by weighted logistic regression.

    Positive labels are the accept class. Refuses anti-discriminative fits
    (a <= 0) and constant score inputs.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be parallel 1-d arrays")
    if np.ptp(s) == 0.0:
        raise FitError("scores are constant: no discrimination to calibrate")
    X = np.column_stack([s, np.ones_like(s)])
    # perfectly separable scores have no finite maximizer; the gradient
    # tolerance stops the ascent at a large finite scale, which is still a
    # valid monotone map
    theta = _fit_logistic(X, y, prior_weighting)
    a, b = float(theta[0]), float(theta[1])
    if a <= 0.0:
        raise FitError(
            f"fitted scale {a:.4g} <= 0: scores rank the classes the wrong "
            f"way around; refusing an anti-discriminative calibration"
        )
    return AffineCalibration(scale=a, bias=b)


def apply_affine(s, cal):
    """a * s + b; works on scalars and arrays."""
    return cal.scale * s + cal.bias


def fit_joint_fusion(s_asv, s_cm, labels, prior_weighting=0.5):
    """Jointly fit sigma(a_asv * s_asv + a_cm * s_cm + b)."""
    sa = np.asarray(s_asv, dtype=np.float64)
    sc = np.asarray(s_cm, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if not (sa.shape == sc.shape == y.shape) or sa.ndim != 1:
        raise ValueError("score vectors and labels must be aligned 1-d arrays")
    X = np.column_stack([sa, sc, np.ones_like(sa)])
    theta = _fit_logistic(X, y, prior_weighting)
    return JointFusionModel(a_asv=float(theta[0]), a_cm=float(theta[1]),
                            bias=float(theta[2]))


def fuse_scores(asv_scores, cm_scores, model, cal_asv=None, cal_cm=None,
                system_tag="fused"):
    """Per-trial fused scores; higher means more likely bona fide target.

    With ``cal_asv``/``cal_cm`` given, the per-system affine maps are
    applied before the joint model (pre-fusion calibration strategy).
    """
    asv_keys = set(asv_scores.entries)
    cm_keys = set(cm_scores.entries)
    if asv_keys != cm_keys:
        only_asv = sorted(asv_keys - cm_keys)[:5]
        only_cm = sorted(cm_keys - asv_keys)[:5]
        raise ValueError(
            f"trial id mismatch: {len(asv_keys - cm_keys)} only in ASV "
            f"(e.g. {only_asv}), {len(cm_keys - asv_keys)} only in CM "
            f"(e.g. {only_cm})"
        )
    fused = {}
    for tid in asv_scores.entries:
        sa = asv_scores.entries[tid]
        sc = cm_scores.entries[tid]
        if cal_asv is not None:
            sa = apply_affine(sa, cal_asv)
        if cal_cm is not None:
            sc = apply_affine(sc, cal_cm)
        fused[tid] = model.a_asv * sa + model.a_cm * sc + model.bias
    return ScoreSet(entries=fused, system_tag=system_tag)


def save_model(path, model):
    """Text model files: ``a b`` for affine, ``a_asv a_cm b`` for fusion."""
    with open(path, "w", encoding="utf-8") as f:
        if isinstance(model, AffineCalibration):
            f.write(f"{model.scale!r} {model.bias!r}\n")
        elif isinstance(model, JointFusionModel):
            f.write(f"{model.a_asv!r} {model.a_cm!r} {model.bias!r}\n")
        else:
            raise ValueError(f"unknown model type {type(model).__name__}")


def load_model(path):
    with open(path, "r", encoding="utf-8") as f:
        parts = f.read().split()
    vals = [float(p) for p in parts]
    if len(vals) == 2:
        return AffineCalibration(scale=vals[0], bias=vals[1])
    if len(vals) == 3:
        return JointFusionModel(a_asv=vals[0], a_cm=vals[1], bias=vals[2])
    raise ValueError(f"{path}: expected 2 or 3 numbers, got {len(vals)}")
