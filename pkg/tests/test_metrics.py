"""Metric tests against brute-force enumeration oracles.

The oracles below re-derive every metric by explicit counting loops over
all candidate thresholds (-inf plus each distinct score), sharing only the
documented conventions with the production code: accept iff score >
threshold, linear EER interpolation on (p_miss, p_fa), first threshold
wins cost ties.
"""

import math

import numpy as np
import pytest

from sasvkit.metrics import (ADCFParams, LabeledScores, a_dcf, det_sweep, eer,
                             labeled_from_sets, min_dcf)
from sasvkit.numerics import make_rng
from sasvkit.protocol_io import ScoreSet, Trial, TrialSet


def brute_rates(pos, neg, thr):
    p_miss = sum(1 for s in pos if s <= thr) / len(pos)
    p_fa = sum(1 for s in neg if s > thr) / len(neg)
    return p_miss, p_fa


def brute_thresholds(scores):
    return [-math.inf] + sorted(set(float(s) for s in scores))


def brute_eer(pos, neg, all_scores):
    prev = None
    for thr in brute_thresholds(all_scores):
        p_miss, p_fa = brute_rates(pos, neg, thr)
        d = p_miss - p_fa
        if d >= 0.0:
            if d == 0.0 or prev is None:
                return p_miss
            m1, f1 = prev
            denom = (p_miss - m1) - (p_fa - f1)
            u = (f1 - m1) / denom
            return m1 + u * (p_miss - m1)
        prev = (p_miss, p_fa)
    raise AssertionError("no crossing")


def brute_min_dcf(pos, neg, all_scores, p_tar, c_miss, c_fa):
    norm = min(c_miss * p_tar, c_fa * (1.0 - p_tar))
    best, best_thr = math.inf, None
    for thr in brute_thresholds(all_scores):
        p_miss, p_fa = brute_rates(pos, neg, thr)
        val = (c_miss * p_tar * p_miss + c_fa * (1.0 - p_tar) * p_fa) / norm
        if val < best:
            best, best_thr = val, thr
    return best, best_thr


def brute_a_dcf(tar, non, spf, params):
    all_scores = list(tar) + list(non) + list(spf)
    norm = min(params.c_miss * params.pi_tar,
               params.c_fa_non * params.pi_non + params.c_fa_spf * params.pi_spf)
    best, best_thr = math.inf, None
    for thr in brute_thresholds(all_scores):
        p_miss = sum(1 for s in tar if s <= thr) / len(tar)
        p_fa_non = sum(1 for s in non if s > thr) / len(non)
        p_fa_spf = sum(1 for s in spf if s > thr) / len(spf)
        val = (params.c_miss * params.pi_tar * p_miss
               + params.c_fa_non * params.pi_non * p_fa_non
               + params.c_fa_spf * params.pi_spf * p_fa_spf) / norm
        if val < best:
            best, best_thr = val, thr
    return best, best_thr


def random_two_class(rng, n_max=200, separation=0.0):
    n_pos = int(rng.integers(1, n_max // 2))
    n_neg = int(rng.integers(1, n_max // 2))
    pos = rng.standard_normal(n_pos) + separation
    neg = rng.standard_normal(n_neg)
    scores = np.concatenate([pos, neg])
    labels = np.array(["target"] * n_pos + ["nontarget"] * n_neg)
    return LabeledScores(scores, labels), pos, neg


def random_three_class(rng, n_max=200):
    n = [int(rng.integers(1, n_max // 3)) for _ in range(3)]
    tar = rng.standard_normal(n[0]) + 2.0
    non = rng.standard_normal(n[1])
    spf = rng.standard_normal(n[2]) + rng.uniform(-1, 1)
    scores = np.concatenate([tar, non, spf])
    labels = np.array(["target"] * n[0] + ["nontarget"] * n[1] + ["spoof"] * n[2])
    return LabeledScores(scores, labels), tar, non, spf


class TestDetSweep:
    def test_perfect_separation_has_zero_error_point(self):
        labeled = LabeledScores(np.array([1.0, 0.0]),
                                np.array(["target", "nontarget"]))
        sweep = det_sweep(labeled)
        assert any(pm == 0.0 and pf == 0.0 for _, pm, pf in sweep)

    def test_all_equal_scores_tie_rule(self):
        labeled = LabeledScores(np.array([0.5] * 6),
                                np.array(["target"] * 3 + ["nontarget"] * 3))
        points = {(pm, pf) for _, pm, pf in det_sweep(labeled)}
        assert points == {(0.0, 1.0), (1.0, 0.0)}

    def test_monotone_rates(self):
        rng = make_rng(5)
        labeled, _, _ = random_two_class(rng)
        sweep = det_sweep(labeled)
        pm = [p for _, p, _ in sweep]
        pf = [p for _, _, p in sweep]
        assert all(a <= b for a, b in zip(pm, pm[1:]))
        assert all(a >= b for a, b in zip(pf, pf[1:]))

    def test_matches_brute_force_counting(self):
        rng = make_rng(6)
        labeled, pos, neg = random_two_class(rng, n_max=50)
        for thr, p_miss, p_fa in det_sweep(labeled):
            bm, bf = brute_rates(pos, neg, thr)
            assert p_miss == bm and p_fa == bf


class TestEER:
    def test_perfectly_separated(self):
        labeled = LabeledScores(np.array([2.0, 3.0, -1.0, 0.0]),
                                np.array(["target", "target", "nontarget", "nontarget"]))
        assert eer(labeled) == 0.0

    def test_small_example_matches_oracle(self):
        tar = [3.0, 2.0, 1.0]
        non = [2.5, 0.5, 0.0]
        labeled = LabeledScores(np.array(tar + non),
                                np.array(["target"] * 3 + ["nontarget"] * 3))
        assert eer(labeled) == brute_eer(tar, non, tar + non)

    def test_random_labels_near_half(self):
        rng = make_rng(11)
        n = 4000
        scores = rng.standard_normal(n)
        labels = np.where(rng.random(n) < 0.5, "target", "nontarget")
        value = eer(LabeledScores(scores, labels))
        # EER of score-independent labels concentrates near 0.5; allow 3
        # sigma of the miss-rate binomial at the crossing
        sigma = 0.5 / math.sqrt(min((labels == "target").sum(),
                                    (labels == "nontarget").sum()))
        assert abs(value - 0.5) < 3 * sigma

    def test_oracle_equivalence_random_sets(self):
        rng = make_rng(12)
        for _ in range(50):
            labeled, pos, neg = random_two_class(rng, separation=rng.uniform(0, 2))
            assert eer(labeled) == brute_eer(pos, neg, labeled.scores)


class TestMinDCF:
    def test_perfectly_separated_zero(self):
        labeled = LabeledScores(np.array([5.0, 4.0, 1.0]),
                                np.array(["target", "target", "nontarget"]))
        value, _ = min_dcf(labeled)
        assert value == 0.0

    def test_bounded_by_one(self):
        rng = make_rng(13)
        for _ in range(20):
            labeled, _, _ = random_two_class(rng)
            value, _ = min_dcf(labeled, p_tar=0.3, c_miss=2.0, c_fa=1.5)
            assert value <= 1.0

    def test_oracle_equivalence_random_sets(self):
        rng = make_rng(14)
        for _ in range(50):
            labeled, pos, neg = random_two_class(rng)
            p_tar = float(rng.uniform(0.01, 0.99))
            got = min_dcf(labeled, p_tar=p_tar, c_miss=1.0, c_fa=2.0)
            want = brute_min_dcf(pos, neg, labeled.scores, p_tar, 1.0, 2.0)
            assert got == want


class TestADCF:
    def test_perfectly_separated_zero(self):
        labeled = LabeledScores(
            np.array([3.0, 2.5, 1.0, 0.5, 0.8]),
            np.array(["target", "target", "nontarget", "spoof", "spoof"]))
        value, _ = a_dcf(labeled)
        assert value == 0.0

    def test_normalized_bound(self):
        rng = make_rng(15)
        for _ in range(20):
            labeled, *_ = random_three_class(rng)
            value, _ = a_dcf(labeled)
            assert value <= 1.0

    def test_report_formatting_five_decimals(self):
        assert f"{0.027473:.5f}" == "0.02747"

    def test_oracle_equivalence_random_sets(self):
        rng = make_rng(16)
        params = ADCFParams()
        for _ in range(50):
            labeled, tar, non, spf = random_three_class(rng)
            assert a_dcf(labeled, params) == brute_a_dcf(tar, non, spf, params)

    def test_missing_class_rejected(self):
        labeled = LabeledScores(np.array([1.0, 0.0]),
                                np.array(["target", "nontarget"]))
        with pytest.raises(ValueError, match="spoof"):
            a_dcf(labeled)


class TestMonotoneInvariance:
    def monotone_maps(self, rng):
        a = float(rng.uniform(0.5, 3.0))
        b = float(rng.uniform(-2.0, 2.0))
        return [
            lambda s: a * s + b,
            lambda s: np.tanh(s) * 5.0,
            lambda s: s ** 3,
            lambda s: np.exp(s / 4.0),
        ]

    def test_all_metrics_invariant(self):
        rng = make_rng(17)
        labeled, *_ = random_three_class(rng)
        base_eer = eer(labeled)
        base_dcf = min_dcf(labeled)[0]
        base_adcf = a_dcf(labeled)[0]
        for f in self.monotone_maps(rng):
            mapped = LabeledScores(f(labeled.scores), labeled.labels)
            assert eer(mapped) == pytest.approx(base_eer, abs=1e-12)
            assert min_dcf(mapped)[0] == pytest.approx(base_dcf, abs=1e-12)
            assert a_dcf(mapped)[0] == pytest.approx(base_adcf, abs=1e-12)


class TestLabeledFromSets:
    def test_join_and_missing_score(self):
        trials = TrialSet([Trial("t1", "e", "a", "target"),
                           Trial("t2", "e", "b", "spoof")])
        ss = ScoreSet(entries={"t1": 1.0, "t2": -1.0})
        labeled = labeled_from_sets(ss, trials)
        assert list(labeled.labels) == ["target", "spoof"]
        ss_bad = ScoreSet(entries={"t1": 1.0})
        with pytest.raises(ValueError, match="t2"):
            labeled_from_sets(ss_bad, trials)
