"""Feature-statistics augmentation for the value stream.

During training, with one Bernoulli(p) draw per batch, each instance's
per-channel mean and standard deviation over time are replaced by Gaussian
jitters of themselves. The jitter magnitudes are the batch-level standard
deviations of those statistics, so the augmentation widens exactly the
directions in which the batch already varies: it perturbs the global style
of an instance while leaving the within-instance frame structure intact
(the map is affine per channel).

With x an instance (T x C), mu/sigma its per-channel stats over time, and
Sigma_mu/Sigma_sigma the per-channel std of mu resp. sigma across the
batch:

    mu~    = mu    + eps_mu    * Sigma_mu,      eps ~ N(0, 1) per entry
    sigma~ = max(0, sigma + eps_sigma * Sigma_sigma)
    x~     = sigma~ * (x - mu) / (sigma + eps_floor) + mu~

sigma~ is clamped at zero since a negative scale would flip features. The
eps_floor guard keeps constant channels (sigma = 0) finite. In expectation
over eps the perturbed features equal the originals.

The backward companion treats the sampled eps as constants but
differentiates through mu, sigma and the batch-level uncertainty
statistics, so the batch loss gradient is exact for the forward as
implemented. Since Sigma_mu/Sigma_sigma couple the batch, gradients for
one instance pick up contributions from every other instance's jitter.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import column_stats

__all__ = ["DSUConfig", "instance_stats", "dsu_perturb", "perturb_with_backward"]


@dataclass
class DSUConfig:
    probability: float = 0.5
    eps_floor: float = 1e-6

    def validate(self):
        if not (0.0 <= self.probability <= 1.0):
            raise ValueError(f"probability must be in [0, 1], got {self.probability}")
        if self.eps_floor <= 0:
            raise ValueError("eps_floor must be positive")


def instance_stats(v):
    """Per-channel mean and std of one instance (rows index time)."""
    return column_stats(v)


def _check_batch(batch):
    if len(batch) < 1:
        raise ValueError("empty batch")
    c = batch[0].shape[1]
    for i, x in enumerate(batch):
        if x.ndim != 2 or x.shape[1] != c:
            raise ValueError(
                f"instance {i} has {x.shape[1] if x.ndim == 2 else '?'} channels, expected {c}"
            )
    return c


def _batch_std(stat):
    # population std of a B x C statistic across the batch axis
    return stat.std(axis=0)


def _apply(batch, eps_mu, eps_sigma, eps_floor):
    mus = np.stack([x.mean(axis=0) for x in batch])            # (B, C)
    sigmas = np.stack([x.std(axis=0) for x in batch])          # (B, C)
    big_mu = _batch_std(mus)                                   # (C,)
    big_sigma = _batch_std(sigmas)                             # (C,)
    mu_t = mus + eps_mu * big_mu
    pre_clamp = sigmas + eps_sigma * big_sigma
    sig_t = np.maximum(pre_clamp, 0.0)
    normed = [(x - mus[i]) / (sigmas[i] + eps_floor) for i, x in enumerate(batch)]
    out = [sig_t[i] * normed[i] + mu_t[i] for i in range(len(batch))]
    cache = {
        "mus": mus, "sigmas": sigmas, "big_mu": big_mu, "big_sigma": big_sigma,
        "eps_mu": eps_mu, "eps_sigma": eps_sigma, "sig_t": sig_t,
        "unclamped": pre_clamp > 0.0, "normed": normed,
        "eps_floor": eps_floor, "lengths": [x.shape[0] for x in batch],
    }
    return out, cache


def _backward(cache, grads_out):
    """Map d(loss)/d(x~) per instance to d(loss)/d(x), eps held constant."""
    mus, sigmas = cache["mus"], cache["sigmas"]
    big_mu, big_sigma = cache["big_mu"], cache["big_sigma"]
    eps_mu, eps_sigma = cache["eps_mu"], cache["eps_sigma"]
    sig_t, normed = cache["sig_t"], cache["normed"]
    unclamped = cache["unclamped"]
    eps_floor = cache["eps_floor"]
    b = mus.shape[0]

    d_mu_t = np.stack([g.sum(axis=0) for g in grads_out])                 # (B, C)
    d_sig_t = np.stack([(g * n).sum(axis=0) for g, n in zip(grads_out, normed)])
    d_pre = d_sig_t * unclamped                                           # through max(0, .)

    # batch-level uncertainty stats: Sigma = population std over the batch
    d_big_mu = (d_mu_t * eps_mu).sum(axis=0)                              # (C,)
    d_big_sigma = (d_pre * eps_sigma).sum(axis=0)

    # d std(stat)/d stat_i = (stat_i - mean(stat)) / (B * std); 0 where std = 0
    def std_back(stat, big, d_big):
        centered = stat - stat.mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(big > 0.0, d_big / (b * np.where(big > 0.0, big, 1.0)), 0.0)
        return centered * coef                                            # (B, C)

    d_mus = d_mu_t + std_back(mus, big_mu, d_big_mu)
    d_sigmas = d_pre + std_back(sigmas, big_sigma, d_big_sigma)

    grads_in = []
    for i, g in enumerate(grads_out):
        t = cache["lengths"][i]
        denom = sigmas[i] + eps_floor
        d_n = g * sig_t[i]                                                # (T, C)
        d_mu_i = d_mus[i] - d_n.sum(axis=0) / denom
        d_sigma_i = d_sigmas[i] - (d_n * normed[i]).sum(axis=0) / denom
        # d sigma/d x_t = (x_t - mu)/(T sigma) = normed * (sigma + eps)/(T sigma)
        with np.errstate(divide="ignore", invalid="ignore"):
            sig_coef = np.where(sigmas[i] > 0.0,
                                d_sigma_i * denom / (t * np.where(sigmas[i] > 0.0, sigmas[i], 1.0)),
                                0.0)
        gx = d_n / denom + d_mu_i / t + normed[i] * sig_coef
        grads_in.append(gx)
    return grads_in


def dsu_perturb(batch, cfg, rng):
    """Perturb a batch of (T_i, C) matrices; identity when the batch-level
    Bernoulli(p) draw does not trigger. p = 0 is a bit-exact identity."""
    out, _ = perturb_with_backward(batch, cfg, rng)
    return out


def perturb_with_backward(batch, cfg, rng, frozen_noise=None):
    """dsu_perturb plus a gradient-mapping closure.

    Returns (batch_out, back) where back(list of dL/dx~) -> list of dL/dx,
    or back is None when the perturbation did not trigger. ``frozen_noise``
    replays a fixed (eps_mu, eps_sigma) pair and forces a trigger, for
    gradient checking.
    """
    cfg.validate()
    batch = [np.asarray(x, dtype=np.float64) for x in batch]
    c = _check_batch(batch)
    if frozen_noise is None:
        if cfg.probability <= 0.0 or rng.random() >= cfg.probability:
            return batch, None
        eps_mu = rng.standard_normal((len(batch), c))
        eps_sigma = rng.standard_normal((len(batch), c))
    else:
        eps_mu, eps_sigma = frozen_noise
    out, cache = _apply(batch, eps_mu, eps_sigma, cfg.eps_floor)
    return out, lambda grads_out: _backward(cache, grads_out)


def draw_noise(batch_size, channels, rng):
    """Sample the (eps_mu, eps_sigma) pair used by a triggered perturbation."""
    return (rng.standard_normal((batch_size, channels)),
            rng.standard_normal((batch_size, channels)))
