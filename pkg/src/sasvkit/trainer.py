"""Training loop for the pooling back-end: AdamW with decoupled weight
decay, linear warmup followed by per-step cosine annealing, seeded
shuffled batching, dev-set checkpoint selection, and an end-to-end
finite-difference gradient check.

Training is bit-deterministic under a fixed seed: shuffling, parameter
init and augmentation draws all derive from the config seed, and batch
gradients are reduced in a fixed order.
"""

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import dsu as dsu_mod
from . import mhfa as mhfa_mod
from .checkpoint import save_checkpoint
from .losses import (AAMConfig, aam_softmax, bce_with_logit, cosine_score,
                     init_aam_head, init_cm_head)
from .metrics import LabeledScores, eer
from .numerics import derived_rng, softmax
from .protocol_io import read_features

TASKS = ("cm_bce", "asv_aam")

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "lr_at",
    "adamw_update",
    "train",
    "grad_check",
]


@dataclass
class TrainConfig:
    max_epochs: int = 8
    batch_size: int = 128
    base_lr: float = 5.0e-4
    final_lr: float = 1.0e-5
    warmup_epochs: int = 2
    weight_decay: float = 1.0e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    task: str = "cm_bce"
    dsu: object = None              # DSUConfig or None (augmentation off)
    seed: int = 0
    aam_margin: float = 0.2
    aam_scale: float = 30.0
    frontend_lr_factor: float = None  # no trainable frontend here; must stay unset

    def validate(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not (0.0 < self.final_lr <= self.base_lr):
            raise ValueError("need 0 < final_lr <= base_lr")
        if not (0 <= self.warmup_epochs < self.max_epochs):
            raise ValueError("need warmup_epochs < max_epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.frontend_lr_factor is not None:
            raise ValueError(
                "frontend_lr_factor is only meaningful with a trainable "
                "frontend; none is trained here"
            )


@dataclass
class OptimizerState:
    """First/second moment accumulators mirroring the parameter dict."""

    m: dict
    v: dict
    step: int = 0


def init_optimizer(params_dict):
    return OptimizerState(
        m={k: np.zeros_like(v) for k, v in params_dict.items()},
        v={k: np.zeros_like(v) for k, v in params_dict.items()},
        step=0,
    )


def lr_at(step, steps_per_epoch, cfg):
    """Learning rate at a global step.

    Linear ramp from 0 to base_lr across the warmup epochs, then cosine
    annealing per step down to final_lr. The endpoints are exact: the
    first post-warmup step runs at base_lr and the last step of the run
    (step = max_epochs * steps_per_epoch - 1) at final_lr.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    warmup = cfg.warmup_epochs * steps_per_epoch
    total = cfg.max_epochs * steps_per_epoch
    if warmup > 0 and step < warmup:
        return cfg.base_lr * step / warmup
    span = total - 1 - warmup
    progress = 1.0 if span <= 0 else min((step - warmup) / span, 1.0)
    # convex-combination form so the endpoints are exact floats
    w = 0.5 * (1.0 + math.cos(math.pi * progress))
    return cfg.base_lr * w + cfg.final_lr * (1.0 - w)


def adamw_update(params, grads, state, lr, cfg):
    """One AdamW step, in place.

    Decoupled weight decay first (params scaled by 1 - lr * wd), then the
    bias-corrected Adam step. Applies uniformly to every parameter.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if cfg.weight_decay != 0.0:
            p *= 1.0 - lr * cfg.weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


class _Model:
    """Back-end parameters plus task head, exposed as one flat dict."""

    def __init__(self, params, head, task):
        self.params = params
        self.head = head
        self.task = task

    def as_dict(self):
        d = dict(self.params.fields())
        if self.task == "cm_bce":
            d["head_w"] = self.head.w
            d["head_b"] = self.head.b
        else:
            d["head_weights"] = self.head.weights
        return d


def _batch_forward_backward(model, xs, labels, aam_cfg, dsu_cfg, rng,
                            frozen_noise=None):
    """Mean loss over a batch plus summed-and-scaled gradients."""
    n = len(xs)
    embeddings, caches, dsu_back = mhfa_mod.forward_batch(
        xs, model.params, training=True, dsu_cfg=dsu_cfg, rng=rng,
        frozen_noise=frozen_noise)
    grad_es = []
    total_loss = 0.0
    head = model.head
    if model.task == "cm_bce":
        g_w = np.zeros_like(head.w)
        g_b = 0.0
        for e, y in zip(embeddings, labels):
            z = float(e @ head.w + head.b[0])
            loss, dz = bce_with_logit(z, y)
            total_loss += loss
            dz /= n
            g_w += dz * e
            g_b += dz
            grad_es.append(dz * head.w)
        head_grads = {"head_w": g_w, "head_b": np.atleast_1d(g_b)}
    else:
        g_weights = np.zeros_like(head.weights)
        for e, y in zip(embeddings, labels):
            loss, g_e, g_w = aam_softmax(e, head.weights, y, aam_cfg)
            total_loss += loss
            grad_es.append(g_e / n)
            g_weights += g_w / n
        head_grads = {"head_weights": g_weights}

    mg = mhfa_mod.backward_batch(caches, grad_es, dsu_back)
    grads = dict(mg.fields())
    grads.update(head_grads)
    return total_loss / n, grads


def _dev_scores(model, features, trial_set):
    """Per-trial scores on the dev trials for the model's task."""
    emb_cache = {}

    def embed(utt_id):
        if utt_id not in emb_cache:
            e, _ = mhfa_mod.mhfa_forward(features[utt_id], model.params)
            emb_cache[utt_id] = e
        return emb_cache[utt_id]

    scores, labels = [], []
    for t in trial_set:
        if model.task == "cm_bce":
            if t.label == "unknown":
                continue
            scores.append(model.head.logit(embed(t.test_id)))
            labels.append("target" if t.label in ("target", "nontarget") else "spoof")
        else:
            if t.label not in ("target", "nontarget"):
                continue  # spoofed/unknown trials excluded from the SV metric
            scores.append(cosine_score(embed(t.enroll_id), embed(t.test_id)))
            labels.append(t.label)
    return LabeledScores(np.array(scores), np.array(labels))


def _dev_eer(model, features, trial_set):
    labeled = _dev_scores(model, features, trial_set)
    if model.task == "cm_bce":
        return eer(labeled, positive_class="target", negative_classes=("spoof",))
    return eer(labeled, positive_class="target", negative_classes=("nontarget",))


@dataclass
class TrainResult:
    checkpoint_path: str
    log_path: str
    epochs: list = field(default_factory=list)   # (epoch, train_loss, dev_eer, lr)
    step_lrs: list = field(default_factory=list)
    best_dev_eer: float = math.inf
    best_epoch: int = -1
    value_layer_weights: list = field(default_factory=list)
    wall_seconds: float = 0.0


def _load_corpus(manifest, trial_set):
    """Split the corpus: utterances referenced by any trial are held out."""
    by_id = {en.utt_id: en for en in manifest}
    held = set()
    for t in trial_set:
        for uid in (t.enroll_id, t.test_id):
            if uid not in by_id:
                raise ValueError(f"trial {t.trial_id!r} references unknown utterance {uid!r}")
            held.add(uid)
    train_entries = [en for en in manifest if en.utt_id not in held]
    if not train_entries:
        raise ValueError("no training utterances left after holding out trial utterances")
    return by_id, train_entries, held


def train(manifest, trial_set, cfg, mhfa_cfg, out_dir):
    """Train a back-end on a feature corpus.

    Utterances referenced by the dev trials are held out of the training
    set. Logs one line per epoch (``epoch loss dev_eer lr``), tracks the
    best dev EER, and writes the best checkpoint.
    """
    cfg.validate()
    mhfa_cfg.validate()
    t0 = time.time()
    by_id, train_entries, held = _load_corpus(manifest, trial_set)

    # surface corpus/label problems before any training work
    if cfg.task == "cm_bce":
        flags = {en.is_spoof for en in train_entries}
        if flags != {True, False}:
            raise ValueError("cm_bce training needs both bonafide and spoof utterances")
        has_spoof_trial = any(t.label == "spoof" for t in trial_set)
        has_bona_trial = any(t.label in ("target", "nontarget") for t in trial_set)
        if not (has_spoof_trial and has_bona_trial):
            raise ValueError("dev trials must contain both bonafide and spoof test utterances")
        speakers = None
    else:
        speakers = sorted({en.speaker_id for en in train_entries})
        if len(speakers) < 2:
            raise ValueError("asv_aam training needs at least 2 speakers")
        if not any(t.label == "target" for t in trial_set) or \
           not any(t.label == "nontarget" for t in trial_set):
            raise ValueError("dev trials must contain target and nontarget pairs")

    features = {en.utt_id: read_features(en.path) for en in manifest}

    if cfg.task == "cm_bce":
        labels = [0 if en.is_spoof else 1 for en in train_entries]
    else:
        spk_index = {s: i for i, s in enumerate(speakers)}
        labels = [spk_index[en.speaker_id] for en in train_entries]

    init_rng = derived_rng(cfg.seed, 0)
    shuffle_rng = derived_rng(cfg.seed, 1)
    dsu_rng = derived_rng(cfg.seed, 2)

    params = mhfa_mod.init_mhfa(mhfa_cfg, init_rng)
    if cfg.task == "cm_bce":
        head = init_cm_head(mhfa_cfg.embed_dim, init_rng)
        aam_cfg = None
    else:
        head = init_aam_head(len(speakers), mhfa_cfg.embed_dim, init_rng)
        aam_cfg = AAMConfig(num_classes=len(speakers),
                            margin=cfg.aam_margin, scale=cfg.aam_scale)
    model = _Model(params, head, cfg.task)
    params_dict = model.as_dict()
    opt = init_optimizer(params_dict)

    xs_all = [features[en.utt_id] for en in train_entries]
    n_train = len(xs_all)
    steps_per_epoch = (n_train + cfg.batch_size - 1) // cfg.batch_size
    dsu_cfg = cfg.dsu if cfg.task == "cm_bce" else None

    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "best.mhfa1")
    log_path = os.path.join(out_dir, "train.log")
    result = TrainResult(checkpoint_path=ckpt_path, log_path=log_path)

    global_step = 0
    with open(log_path, "w", encoding="utf-8") as logf:
        for epoch in range(cfg.max_epochs):
            order = shuffle_rng.permutation(n_train)
            epoch_loss = 0.0
            last_lr = 0.0
            for b0 in range(0, n_train, cfg.batch_size):
                idx = order[b0:b0 + cfg.batch_size]
                xs = [xs_all[i] for i in idx]
                ys = [labels[i] for i in idx]
                loss, grads = _batch_forward_backward(
                    model, xs, ys, aam_cfg, dsu_cfg, dsu_rng)
                lr = lr_at(global_step, steps_per_epoch, cfg)
                adamw_update(params_dict, grads, opt, lr, cfg)
                epoch_loss += loss * len(xs)
                result.step_lrs.append(lr)
                last_lr = lr
                global_step += 1
            epoch_loss /= n_train
            dev = _dev_eer(model, features, trial_set)
            result.epochs.append((epoch, epoch_loss, dev, last_lr))
            logf.write(f"{epoch} {epoch_loss:.6f} {dev:.6f} {last_lr:.8g}\n")
            if dev < result.best_dev_eer:
                result.best_dev_eer = dev
                result.best_epoch = epoch
                save_checkpoint(ckpt_path, model.params, model.head)

    result.value_layer_weights = [float(x) for x in softmax(model.params.w_v)]
    result.wall_seconds = time.time() - t0
    return result


def max_rel_error(analytic, numeric):
    """max |a - n| / max(1, |a|, |n|) over all coordinates."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(1.0, abs(a), abs(n))
        worst = max(worst, abs(a - n) / denom)
    return worst


def grad_check(mhfa_cfg=None, task="cm_bce", seed=0, use_dsu=False,
               batch_size=3, fd_step=1e-5):
    """Central-difference check of the full analytic gradient path.

    Builds a small random batch, computes the mean task loss, and compares
    the analytic gradient of every parameter coordinate against central
    finite differences at double precision. When the augmentation is
    active its noise draw is frozen, so both gradient routes see the same
    perturbation. Returns the max relative error.
    """
    if mhfa_cfg is None:
        mhfa_cfg = mhfa_mod.MHFAConfig(num_layers=2, input_dim=6, num_heads=2,
                                       compression_dim=4, embed_dim=3)
    mhfa_cfg.validate()
    rng = derived_rng(seed, 100)
    T = 4
    xs = [rng.standard_normal((mhfa_cfg.num_layers, T, mhfa_cfg.input_dim))
          for _ in range(batch_size)]
    params = mhfa_mod.init_mhfa(mhfa_cfg, rng)
    # break the zero-logit symmetry so layer-weight gradients are generic
    params.w_k = 0.1 * rng.standard_normal(mhfa_cfg.num_layers)
    params.w_v = 0.1 * rng.standard_normal(mhfa_cfg.num_layers)

    if task == "cm_bce":
        head = init_cm_head(mhfa_cfg.embed_dim, rng)
        labels = [int(rng.integers(0, 2)) for _ in range(batch_size)]
        aam_cfg = None
    elif task == "asv_aam":
        num_classes = 4
        head = init_aam_head(num_classes, mhfa_cfg.embed_dim, rng)
        labels = [int(rng.integers(0, num_classes)) for _ in range(batch_size)]
        aam_cfg = AAMConfig(num_classes=num_classes)
    else:
        raise ValueError(f"unknown task {task!r}")
    model = _Model(params, head, task)
    params_dict = model.as_dict()

    dsu_cfg = dsu_mod.DSUConfig() if use_dsu else None
    frozen = dsu_mod.draw_noise(batch_size, mhfa_cfg.input_dim, rng) if use_dsu else None

    def loss_value():
        embeddings, _, _ = mhfa_mod.forward_batch(
            xs, model.params, training=True, dsu_cfg=dsu_cfg, rng=None,
            frozen_noise=frozen)
        total = 0.0
        for e, y in zip(embeddings, labels):
            if task == "cm_bce":
                z = float(e @ head.w + head.b[0])
                total += bce_with_logit(z, y)[0]
            else:
                total += aam_softmax(e, head.weights, y, aam_cfg)[0]
        return total / batch_size

    _, grads = _batch_forward_backward(model, xs, labels, aam_cfg, dsu_cfg,
                                       rng=None, frozen_noise=frozen)

    analytic, numeric = [], []
    for name, p in params_dict.items():
        flat = p.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            up = loss_value()
            flat[i] = orig - fd_step
            down = loss_value()
            flat[i] = orig
            numeric.append((up - down) / (2.0 * fd_step))
            analytic.append(gflat[i])
    return max_rel_error(analytic, numeric)
