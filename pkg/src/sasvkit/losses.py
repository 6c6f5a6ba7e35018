"""Task heads, losses and trial scoring.

The countermeasure head is a single logit with binary cross-entropy; the
verification head is additive-angular-margin softmax over speaker classes.
Verification trials are scored by cosine similarity between embeddings,
optionally normalized against cohort statistics (adaptive s-norm).

Every loss returns analytic gradients next to its value; both heads are
covered by finite-difference checks in the test suite.
"""

import math
from dataclasses import dataclass

import numpy as np

from .numerics import require_finite

__all__ = [
    "AAMConfig",
    "CMHead",
    "AAMHead",
    "bce_with_logit",
    "aam_softmax",
    "cosine_score",
    "adaptive_snorm",
]

_SIN_FLOOR = 1e-12  # keeps the margin derivative finite at |cos| -> 1


@dataclass
class AAMConfig:
    num_classes: int
    margin: float = 0.2
    scale: float = 30.0

    def validate(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if not (0.0 <= self.margin < math.pi / 2):
            raise ValueError(f"margin must be in [0, pi/2), got {self.margin}")
        if self.scale <= 0:
            raise ValueError("scale must be positive")


@dataclass
class CMHead:
    """Linear bonafide-vs-spoof logit head on top of the embedding.

    The bias is kept as a 1-element array so the optimizer can hold a
    shared view of it.
    """

    w: np.ndarray
    b: np.ndarray

    def logit(self, e):
        return float(e @ self.w + self.b[0])


@dataclass
class AAMHead:
    """One weight row per speaker class; rows are normalized inside the loss."""

    weights: np.ndarray  # (C, E)


def init_cm_head(embed_dim, rng):
    bound = math.sqrt(3.0) / math.sqrt(embed_dim)
    return CMHead(w=rng.uniform(-bound, bound, size=embed_dim), b=np.zeros(1))


def init_aam_head(num_classes, embed_dim, rng):
    bound = math.sqrt(3.0) / math.sqrt(embed_dim)
    return AAMHead(weights=rng.uniform(-bound, bound, size=(num_classes, embed_dim)))


def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def bce_with_logit(logit, label):
    """Binary cross-entropy on a raw logit. label: bonafide=1, spoof=0.

    Uses the log-sum-exp form max(z,0) - z*y + log1p(exp(-|z|)), stable for
    any magnitude of z. Returns (loss, dloss/dlogit) with the gradient
    sigmoid(z) - y exactly.
    """
    z = float(logit)
    if not math.isfinite(z):
        raise ValueError("non-finite logit")
    y = float(label)
    loss = max(z, 0.0) - z * y + math.log1p(math.exp(-abs(z)))
    return loss, _sigmoid(z) - y


def aam_softmax(e, weights, y, cfg):
    """Additive angular margin softmax loss with analytic gradients.

    Embedding and class rows are length-normalized; the target class logit
    becomes cos(theta_y + m), all logits are scaled by s, and the loss is
    cross-entropy. With m = 0 this is exactly scaled-cosine softmax
    cross-entropy. Returns (loss, grad_e, grad_weights).
    """
    cfg.validate()
    e = np.asarray(e, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (cfg.num_classes, e.shape[0]):
        raise ValueError(
            f"weights shape {weights.shape} does not match "
            f"{cfg.num_classes} classes x dim {e.shape[0]}"
        )
    if not (0 <= y < cfg.num_classes):
        raise ValueError(f"label {y} out of range")
    e_norm = np.linalg.norm(e)
    w_norms = np.linalg.norm(weights, axis=1)
    if e_norm == 0.0:
        raise ValueError("zero-norm embedding")
    if np.any(w_norms == 0.0):
        raise ValueError("zero-norm class weight row")
    e_hat = e / e_norm
    w_hat = weights / w_norms[:, None]
    cos = w_hat @ e_hat                                    # (C,)

    sin_y = math.sqrt(max(1.0 - cos[y] * cos[y], 0.0))
    cos_m, sin_m = math.cos(cfg.margin), math.sin(cfg.margin)
    logits = cfg.scale * cos
    logits_y = cfg.scale * (cos[y] * cos_m - sin_y * sin_m)
    z = logits.copy()
    z[y] = logits_y

    zmax = z.max()
    logsumexp = zmax + math.log(np.exp(z - zmax).sum())
    loss = logsumexp - z[y]

    p = np.exp(z - logsumexp)
    dz = p.copy()
    dz[y] -= 1.0
    # dz_j/dcos_j = s except the margin class, where the chain picks up
    # d cos(theta+m)/d cos(theta) = cos_m + sin_m * cos/sin
    dcos = dz * cfg.scale
    dcos[y] = dz[y] * cfg.scale * (cos_m + sin_m * cos[y] / max(sin_y, _SIN_FLOOR))

    # cos_j = w_hat_j . e_hat; differentiate through both normalizations
    grad_e = (dcos @ w_hat - np.dot(dcos, cos) * e_hat) / e_norm
    grad_w = (dcos[:, None] * e_hat[None, :]
              - (dcos * cos)[:, None] * w_hat) / w_norms[:, None]
    return loss, grad_e, grad_w


def cosine_score(a, b):
    """Cosine similarity of two embeddings, in [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero-norm embedding in cosine_score")
    return float(a @ b / (na * nb))


def adaptive_snorm(raw, enroll_cohort_scores, test_cohort_scores, top_k):
    """Symmetric cohort normalization of a raw verification score.

    The mean/std on each side are taken over the top_k largest cohort
    scores (population std). Strictly increasing in ``raw`` for fixed
    cohorts, so ranking metrics are preserved.
    """
    enroll = np.asarray(enroll_cohort_scores, dtype=np.float64)
    test = np.asarray(test_cohort_scores, dtype=np.float64)
    if enroll.size == 0 or test.size == 0:
        raise ValueError("empty cohort")
    if not (1 <= top_k <= min(enroll.size, test.size)):
        raise ValueError(f"top_k={top_k} invalid for cohort sizes "
                         f"{enroll.size}/{test.size}")
    require_finite("cohort scores", enroll)
    require_finite("cohort scores", test)

    def stats(scores):
        top = np.sort(scores)[-top_k:]
        mu, sd = top.mean(), top.std()
        if sd == 0.0:
            raise ValueError("degenerate cohort: zero variance in top-k scores")
        return mu, sd

    mu_e, sd_e = stats(enroll)
    mu_t, sd_t = stats(test)
    return 0.5 * ((raw - mu_e) / sd_e + (raw - mu_t) / sd_t)
