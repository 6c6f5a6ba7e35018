"""Shared fixtures and synthetic score-set builders."""

import numpy as np

from sasvkit.metrics import LabeledScores
from sasvkit.numerics import make_rng
from sasvkit.protocol_io import ScoreSet, Trial, TrialSet


def make_sasv_scores(seed, n_tar=120, n_non=120, n_spf=120,
                     asv_sep=2.0, cm_sep=2.0, spoof_mimics_target=True):
    """Construct complementary ASV and CM score sets over shared trials.

    ASV separates target from nontarget but, when spoofs mimic the target
    voice, barely rejects spoofs; CM separates bonafide from spoof but is
    blind to speaker identity. Returns (trial_set, asv_scores, cm_scores).
    """
    rng = make_rng(seed)
    trials, asv, cm = [], {}, {}
    idx = 0

    def add(label, asv_mean, cm_mean):
        nonlocal idx
        tid = f"t{idx:05d}"
        trials.append(Trial(tid, f"e{idx % 10}", f"u{idx}", label))
        asv[tid] = float(rng.normal(asv_mean, 1.0))
        cm[tid] = float(rng.normal(cm_mean, 1.0))
        idx += 1

    spoof_asv_mean = asv_sep * (0.9 if spoof_mimics_target else -1.0)
    for _ in range(n_tar):
        add("target", asv_sep, cm_sep)
    for _ in range(n_non):
        add("nontarget", -asv_sep, cm_sep)
    for _ in range(n_spf):
        add("spoof", spoof_asv_mean, -cm_sep)

    return (TrialSet(trials),
            ScoreSet(entries=asv, system_tag="asv"),
            ScoreSet(entries=cm, system_tag="cm"))


def labeled(score_set, trial_set):
    scores = np.array([score_set.entries[t.trial_id] for t in trial_set])
    labels = np.array([t.label for t in trial_set])
    return LabeledScores(scores, labels)
