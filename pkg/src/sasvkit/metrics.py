"""Detection metrics over labeled score sets.

Conventions, fixed so that independent oracles can reproduce every value
bit for bit:

* Decision rule: accept iff score > threshold. Ties are rejected.
* The threshold sweep visits -inf (accept everything) followed by every
  distinct observed score, in increasing order.
* P_miss(t) is the fraction of positive-class trials with score <= t;
  each false-alarm rate is the fraction of the relevant negative class
  with score > t.
* EER uses linear interpolation on (P_miss, P_fa) between the two sweep
  points bracketing the sign change of P_miss - P_fa.
* minDCF is normalized by min(c_miss * p_tar, c_fa * (1 - p_tar)); the
  three-class single-threshold cost is normalized by the cheaper of the
  two uninformed systems (reject-all vs accept-all).

All metrics are therefore invariant under strictly increasing transforms
of the scores.
"""

import math
from dataclasses import dataclass

import numpy as np

CLASSES = ("target", "nontarget", "spoof")

__all__ = [
    "ADCFParams",
    "LabeledScores",
    "labeled_from_sets",
    "det_sweep",
    "eer",
    "min_dcf",
    "a_dcf",
]


@dataclass
class ADCFParams:
    """Operating point of the three-class detection cost.

    Defaults follow the prevailing convention for spoofing-robust
    verification; they are a configurable stand-in, not ground truth.
    """

    pi_tar: float = 0.9405
    pi_non: float = 0.0095
    pi_spf: float = 0.05
    c_miss: float = 1.0
    c_fa_non: float = 10.0
    c_fa_spf: float = 10.0

    def validate(self):
        priors = (self.pi_tar, self.pi_non, self.pi_spf)
        if any(p < 0 for p in priors) or abs(sum(priors) - 1.0) > 1e-9:
            raise ValueError(f"priors must be a simplex, got {priors}")
        if min(self.c_miss, self.c_fa_non, self.c_fa_spf) <= 0:
            raise ValueError("costs must be positive")


@dataclass
class LabeledScores:
    """Parallel arrays of scores and class labels (strings)."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise ValueError("scores and labels must be parallel 1-d arrays")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores contain non-finite values")

    def of_class(self, *names):
        mask = np.isin(self.labels, names)
        return self.scores[mask]


def labeled_from_sets(score_set, trial_set):
    """Join a ScoreSet with a TrialSet on trial_id."""
    scores, labels = [], []
    for t in trial_set:
        if t.trial_id not in score_set.entries:
            raise ValueError(f"trial {t.trial_id!r} has no score")
        scores.append(score_set.entries[t.trial_id])
        labels.append(t.label)
    return LabeledScores(np.array(scores, dtype=np.float64), np.array(labels))


def _sweep_thresholds(scores):
    return [-math.inf] + sorted(set(float(s) for s in scores))


def det_sweep(labeled, positive_class="target", negative_classes=("nontarget",)):
    """Exact miss/false-alarm sweep over all distinct score thresholds.

    Returns a list of (threshold, p_miss, p_fa) with p_miss non-decreasing
    and p_fa non-increasing in the threshold.
    """
    pos = labeled.of_class(positive_class)
    neg = labeled.of_class(*negative_classes)
    if pos.size == 0:
        raise ValueError(f"no trials of positive class {positive_class!r}")
    if neg.size == 0:
        raise ValueError(f"no trials of negative classes {negative_classes!r}")
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    out = []
    for t in _sweep_thresholds(labeled.scores):
        # accept iff score > t: misses are pos <= t, false alarms neg > t
        p_miss = np.searchsorted(pos_sorted, t, side="right") / pos.size
        p_fa = (neg.size - np.searchsorted(neg_sorted, t, side="right")) / neg.size
        out.append((t, float(p_miss), float(p_fa)))
    return out


def eer(labeled, positive_class="target", negative_classes=("nontarget",)):
    """Equal error rate with linear interpolation at the crossing."""
    sweep = det_sweep(labeled, positive_class, negative_classes)
    prev = None
    for t, p_miss, p_fa in sweep:
        d = p_miss - p_fa
        if d >= 0.0:
            if d == 0.0 or prev is None:
                return p_miss
            _, m1, f1 = prev
            m2, f2 = p_miss, p_fa
            # solve m1 + u*(m2-m1) = f1 + u*(f2-f1) on the segment
            denom = (m2 - m1) - (f2 - f1)
            u = (f1 - m1) / denom
            return m1 + u * (m2 - m1)
        prev = (t, p_miss, p_fa)
    raise AssertionError("sweep ends at p_miss=1, p_fa=0; crossing must exist")


def min_dcf(labeled, p_tar=0.05, c_miss=1.0, c_fa=1.0,
            positive_class="target", negative_classes=("nontarget",)):
    """Minimum normalized detection cost and its threshold."""
    if not (0.0 < p_tar < 1.0) or c_miss <= 0 or c_fa <= 0:
        raise ValueError("invalid prior or costs")
    sweep = det_sweep(labeled, positive_class, negative_classes)
    norm = min(c_miss * p_tar, c_fa * (1.0 - p_tar))
    best_val, best_thr = math.inf, None
    for t, p_miss, p_fa in sweep:
        val = (c_miss * p_tar * p_miss + c_fa * (1.0 - p_tar) * p_fa) / norm
        if val < best_val:
            best_val, best_thr = val, t
    return best_val, best_thr


def a_dcf(labeled, params=None):
    """Minimum normalized three-class single-threshold cost.

    Targets should score high; both nontarget impostors and spoofed
    trials should score low. Returns (value, threshold).
    """
    params = params if params is not None else ADCFParams()
    params.validate()
    tar = np.sort(labeled.of_class("target"))
    non = np.sort(labeled.of_class("nontarget"))
    spf = np.sort(labeled.of_class("spoof"))
    for name, arr in (("target", tar), ("nontarget", non), ("spoof", spf)):
        if arr.size == 0:
            raise ValueError(f"no trials of class {name!r}")
    norm = min(params.c_miss * params.pi_tar,
               params.c_fa_non * params.pi_non + params.c_fa_spf * params.pi_spf)
    best_val, best_thr = math.inf, None
    for t in _sweep_thresholds(labeled.scores):
        p_miss = np.searchsorted(tar, t, side="right") / tar.size
        p_fa_non = (non.size - np.searchsorted(non, t, side="right")) / non.size
        p_fa_spf = (spf.size - np.searchsorted(spf, t, side="right")) / spf.size
        val = (params.c_miss * params.pi_tar * p_miss
               + params.c_fa_non * params.pi_non * p_fa_non
               + params.c_fa_spf * params.pi_spf * p_fa_spf) / norm
        if val < best_val:
            best_val, best_thr = val, t
    return best_val, best_thr
