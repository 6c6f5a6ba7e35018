"""Multi-head factorized attention pooling over layered features.

The back-end aggregates an L x T x D feature stack twice, with separate
softmax-normalized layer weights for a key stream (where to attend) and a
value stream (what to extract). Both aggregates are compressed by linear
projections; per-head attention maps are computed from the key stream and
normalized over the time axis; each head pools the shared compressed value
vector by a weighted sum; the concatenated head outputs feed an affine map
to the output embedding.

Forward and backward passes are written out analytically in numpy. The
backward pass is exact for the forward as implemented, including an
optional value-stream hook (used for training-time feature augmentation),
and is validated against central finite differences in the test suite.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import require_finite, softmax

__all__ = [
    "MHFAConfig",
    "MHFAParams",
    "MHFAGrads",
    "init_mhfa",
    "layer_aggregate",
    "mhfa_forward",
    "mhfa_backward",
    "forward_batch",
    "backward_batch",
    "zero_grads",
]


@dataclass
class MHFAConfig:
    num_layers: int
    input_dim: int
    num_heads: int = 32
    compression_dim: int = 128
    embed_dim: int = 256

    def validate(self):
        for name in ("num_layers", "input_dim", "num_heads", "compression_dim", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class MHFAParams:
    w_k: np.ndarray      # (L,) key-stream layer logits
    w_v: np.ndarray      # (L,) value-stream layer logits
    W_k: np.ndarray      # (D, D_cmp)
    W_v: np.ndarray      # (D, D_cmp)
    W_att: np.ndarray    # (D_cmp, H), one attention map per head
    W_out: np.ndarray    # (H * D_cmp, E)
    b_out: np.ndarray    # (E,)

    def config(self):
        L = self.w_k.shape[0]
        D, D_cmp = self.W_k.shape
        H = self.W_att.shape[1]
        E = self.b_out.shape[0]
        return MHFAConfig(L, D, H, D_cmp, E)

    def fields(self):
        return {
            "w_k": self.w_k, "w_v": self.w_v,
            "W_k": self.W_k, "W_v": self.W_v,
            "W_att": self.W_att, "W_out": self.W_out, "b_out": self.b_out,
        }


@dataclass
class MHFAGrads:
    w_k: np.ndarray
    w_v: np.ndarray
    W_k: np.ndarray
    W_v: np.ndarray
    W_att: np.ndarray
    W_out: np.ndarray
    b_out: np.ndarray
    x: np.ndarray = None  # input gradient, only when requested

    def fields(self):
        return {
            "w_k": self.w_k, "w_v": self.w_v,
            "W_k": self.W_k, "W_v": self.W_v,
            "W_att": self.W_att, "W_out": self.W_out, "b_out": self.b_out,
        }


def _uniform_init(rng, shape, fan_in):
    # zero-mean uniform with std 1/sqrt(fan_in)
    bound = np.sqrt(3.0) / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_mhfa(cfg, rng):
    """Fresh parameters: zero layer logits (uniform attention over layers
    after softmax), variance-scaled uniform projections."""
    cfg.validate()
    L, D, H = cfg.num_layers, cfg.input_dim, cfg.num_heads
    D_cmp, E = cfg.compression_dim, cfg.embed_dim
    return MHFAParams(
        w_k=np.zeros(L),
        w_v=np.zeros(L),
        W_k=_uniform_init(rng, (D, D_cmp), D),
        W_v=_uniform_init(rng, (D, D_cmp), D),
        W_att=_uniform_init(rng, (D_cmp, H), D_cmp),
        W_out=_uniform_init(rng, (H * D_cmp, E), H * D_cmp),
        b_out=np.zeros(E),
    )


def layer_aggregate(x, w):
    """Softmax-weighted sum over the layer axis: (L,T,D), (L,) -> (T,D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError("layered features must have shape (L, T, D)")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (x.shape[0],):
        raise ValueError(f"layer weights shape {w.shape} does not match L={x.shape[0]}")
    a = softmax(w)
    return np.tensordot(a, x, axes=(0, 0))


def _softmax_backward(a, da):
    # d/dlogits of softmax(logits) applied to upstream da, given a = softmax(logits)
    return a * (da - np.dot(a, da))


def _columnwise_softmax(s):
    e = np.exp(s - s.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


class ForwardCache:
    """Intermediates of one training-mode forward, consumed by backward."""

    __slots__ = ("x", "params", "a_k", "a_v", "k_feat", "v_pre", "v_post",
                 "hook_back", "att", "pooled", "concat")

    def __init__(self, **kw):
        for name in self.__slots__:
            setattr(self, name, kw.get(name))


def mhfa_forward(x, params, training=False, dsu_hook=None, rng=None):
    """Pool one layered-feature stack into an embedding.

    ``dsu_hook``, applied only in training mode, maps the aggregated value
    stream (T, D) to a perturbed version; it must return
    ``(v_perturbed, back_fn)`` where ``back_fn`` propagates gradients from
    the perturbed values back to the originals (None means identity).

    Returns (embedding, cache); the cache is None unless training.
    """
    x = np.asarray(x, dtype=np.float64)
    cfg = params.config()
    if x.ndim != 3 or x.shape[0] != cfg.num_layers or x.shape[2] != cfg.input_dim:
        raise ValueError(
            f"feature shape {x.shape} incompatible with model "
            f"L={cfg.num_layers} D={cfg.input_dim}"
        )
    a_k = softmax(params.w_k)
    a_v = softmax(params.w_v)
    k_feat = np.tensordot(a_k, x, axes=(0, 0))   # (T, D)
    v_pre = np.tensordot(a_v, x, axes=(0, 0))    # (T, D)

    hook_back = None
    v_post = v_pre
    if training and dsu_hook is not None:
        v_post, hook_back = dsu_hook(v_pre, rng)

    k = k_feat @ params.W_k                      # (T, D_cmp)
    v = v_post @ params.W_v                      # (T, D_cmp)
    att = _columnwise_softmax(k @ params.W_att)  # (T, H), columns sum to 1
    pooled = att.T @ v                           # (H, D_cmp)
    concat = pooled.reshape(-1)                  # head-major
    e = concat @ params.W_out + params.b_out
    require_finite("embedding", e)

    cache = None
    if training:
        cache = ForwardCache(x=x, params=params, a_k=a_k, a_v=a_v,
                             k_feat=k_feat, v_pre=v_pre, v_post=v_post,
                             hook_back=hook_back, att=att, pooled=pooled,
                             concat=concat)
    return e, cache


def _backward_to_streams(cache, grad_e):
    """Backprop from the embedding to the two aggregated streams.

    Returns (grads, d_k_feat, d_v_post) where ``grads`` holds everything
    downstream of the aggregates (projections, output map) plus zeroed
    layer-weight slots to be filled by the caller.
    """
    p = cache.params
    grad_e = np.asarray(grad_e, dtype=np.float64)
    if grad_e.shape != p.b_out.shape:
        raise ValueError("embedding gradient shape mismatch with cached instance")

    k = cache.k_feat @ p.W_k
    v = cache.v_post @ p.W_v
    att = cache.att

    d_concat = p.W_out @ grad_e
    dW_out = np.outer(cache.concat, grad_e)
    db_out = grad_e.copy()

    H = att.shape[1]
    d_pooled = d_concat.reshape(H, -1)           # (H, D_cmp)
    d_att = v @ d_pooled.T                       # (T, H)
    d_v = att @ d_pooled                         # (T, D_cmp)

    # softmax over time, independently per head column
    col_dot = np.sum(att * d_att, axis=0, keepdims=True)
    d_s = att * (d_att - col_dot)                # (T, H)

    dW_att = k.T @ d_s
    d_k = d_s @ p.W_att.T                        # (T, D_cmp)

    dW_k = cache.k_feat.T @ d_k
    d_k_feat = d_k @ p.W_k.T                     # (T, D)
    dW_v = cache.v_post.T @ d_v
    d_v_post = d_v @ p.W_v.T                     # (T, D)

    grads = MHFAGrads(
        w_k=np.zeros_like(p.w_k), w_v=np.zeros_like(p.w_v),
        W_k=dW_k, W_v=dW_v, W_att=dW_att, W_out=dW_out, b_out=db_out,
    )
    return grads, d_k_feat, d_v_post


def _aggregate_backward(x, d_feat):
    """Backprop through feat = sum_l a[l] * x[l] w.r.t. the weights a."""
    return np.tensordot(d_feat, x, axes=([0, 1], [1, 2]))


def mhfa_backward(cache, grad_e, want_input_grad=False):
    """Analytic gradients for one instance given d(loss)/d(embedding).

    Gradients flow through the value-stream hook when one was active; the
    hook's own sampled noise is treated as constant.
    """
    if cache is None:
        raise ValueError("backward requires a cache from a training-mode forward")
    grads, d_k_feat, d_v_post = _backward_to_streams(cache, grad_e)

    d_v_pre = cache.hook_back(d_v_post) if cache.hook_back is not None else d_v_post

    da_k = _aggregate_backward(cache.x, d_k_feat)
    da_v = _aggregate_backward(cache.x, d_v_pre)
    grads.w_k = _softmax_backward(cache.a_k, da_k)
    grads.w_v = _softmax_backward(cache.a_v, da_v)

    if want_input_grad:
        # x enters both streams: d x[l] = a_k[l] * dK_feat + a_v[l] * dV_pre
        grads.x = (cache.a_k[:, None, None] * d_k_feat[None, :, :]
                   + cache.a_v[:, None, None] * d_v_pre[None, :, :])
    return grads


def zero_grads(params):
    return MHFAGrads(**{k: np.zeros_like(v) for k, v in params.fields().items()})


def accumulate(total, g):
    for name, arr in g.fields().items():
        acc = getattr(total, name)
        acc += arr


def forward_batch(xs, params, training=False, dsu_cfg=None, rng=None,
                  frozen_noise=None):
    """Forward a batch of instances with batch-level value augmentation.

    When ``dsu_cfg`` is given (training only), the aggregated value streams
    of the whole batch are perturbed jointly, since the augmentation draws
    its uncertainty statistics across the batch. ``frozen_noise`` replays a
    fixed draw (used by gradient checking).

    Returns (embeddings, caches, dsu_back) where dsu_back maps the list of
    per-instance gradients at the perturbed values back through the
    augmentation (None when inactive).
    """
    from . import dsu as dsu_mod

    a_k = softmax(params.w_k)
    a_v = softmax(params.w_v)
    k_feats = [np.tensordot(a_k, x, axes=(0, 0)) for x in xs]
    v_pres = [np.tensordot(a_v, x, axes=(0, 0)) for x in xs]

    dsu_back = None
    if training and dsu_cfg is not None:
        v_posts, dsu_back = dsu_mod.perturb_with_backward(
            v_pres, dsu_cfg, rng, frozen_noise=frozen_noise)
    else:
        v_posts = v_pres

    embeddings, caches = [], []
    for x, k_feat, v_pre, v_post in zip(xs, k_feats, v_pres, v_posts):
        k = k_feat @ params.W_k
        v = v_post @ params.W_v
        att = _columnwise_softmax(k @ params.W_att)
        pooled = att.T @ v
        concat = pooled.reshape(-1)
        e = concat @ params.W_out + params.b_out
        embeddings.append(e)
        if training:
            caches.append(ForwardCache(x=x, params=params, a_k=a_k, a_v=a_v,
                                       k_feat=k_feat, v_pre=v_pre,
                                       v_post=v_post, hook_back=None,
                                       att=att, pooled=pooled, concat=concat))
    return embeddings, (caches if training else None), dsu_back


def backward_batch(caches, grad_es, dsu_back=None):
    """Summed parameter gradients over a batch forwarded by forward_batch."""
    if not caches:
        raise ValueError("empty batch")
    total = zero_grads(caches[0].params)
    d_v_posts = []
    for cache, g_e in zip(caches, grad_es):
        grads, d_k_feat, d_v_post = _backward_to_streams(cache, g_e)
        grads.w_k = _softmax_backward(cache.a_k, _aggregate_backward(cache.x, d_k_feat))
        accumulate(total, grads)
        d_v_posts.append(d_v_post)

    d_v_pres = dsu_back(d_v_posts) if dsu_back is not None else d_v_posts

    for cache, d_v_pre in zip(caches, d_v_pres):
        da_v = _aggregate_backward(cache.x, d_v_pre)
        total.w_v += _softmax_backward(cache.a_v, da_v)
    return total
