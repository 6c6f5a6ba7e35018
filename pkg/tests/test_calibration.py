import math

import numpy as np
import pytest
from conftest import labeled, make_sasv_scores

from sasvkit.calibration import (AffineCalibration, FitError,
                                 JointFusionModel, apply_affine,
                                 fit_calibration, fit_joint_fusion,
                                 fuse_scores, load_model, save_model)
from sasvkit.metrics import a_dcf, eer
from sasvkit.numerics import make_rng
from sasvkit.protocol_io import ScoreSet


def true_llr_scores(rng, n_per_class=20000, mean=1.0):
    """Scores that ARE the log-likelihood ratio of two unit Gaussians at
    +-mean, so a perfectly calibrated map is the identity (a=1, b=0)."""
    pos = rng.normal(mean, 1.0, n_per_class)
    neg = rng.normal(-mean, 1.0, n_per_class)
    x = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(n_per_class), np.zeros(n_per_class)])
    llr = 2.0 * mean * x  # ((x-(-m))^2 - (x-m)^2) / 2 = 2 m x
    return llr, y


class TestFitCalibration:
    def test_true_llrs_fit_identity(self):
        llr, y = true_llr_scores(make_rng(0))
        cal = fit_calibration(llr, y, prior_weighting=0.5)
        assert abs(cal.scale - 1.0) < 0.05
        assert abs(cal.bias) < 0.05

    def test_flipped_labels_rejected(self):
        llr, y = true_llr_scores(make_rng(1), n_per_class=500)
        with pytest.raises(FitError, match="anti-discriminative"):
            fit_calibration(llr, 1.0 - y)

    def test_constant_scores_rejected(self):
        y = np.array([0.0, 1.0, 0.0, 1.0])
        with pytest.raises(FitError, match="constant"):
            fit_calibration(np.full(4, 3.3), y)

    def test_single_class_rejected(self):
        with pytest.raises(FitError, match="both classes"):
            fit_calibration(np.array([1.0, 2.0]), np.array([1.0, 1.0]))

    def test_perfectly_separable_scores_give_finite_steep_map(self):
        # no finite MLE exists, but the gradient tolerance stops the ascent
        # once the likelihood tail flattens; the map stays monotone
        s = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
        y = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
        cal = fit_calibration(s, y)
        assert math.isfinite(cal.scale) and cal.scale > 5.0

    def test_prior_weighting_shifts_bias(self):
        llr, y = true_llr_scores(make_rng(2), n_per_class=4000)
        low = fit_calibration(llr, y, prior_weighting=0.2)
        high = fit_calibration(llr, y, prior_weighting=0.8)
        assert low.bias < high.bias  # rarer positives push the bias down


class TestApplyAffine:
    def test_identity(self):
        assert apply_affine(1.75, AffineCalibration(1.0, 0.0)) == 1.75

    def test_affine_example(self):
        assert apply_affine(3.0, AffineCalibration(2.0, 1.0)) == 7.0

    def test_eer_preserved_by_fitted_map(self):
        trials, asv, _ = make_sasv_scores(3)
        base = labeled(asv, trials)
        scores = base.of_class("target", "nontarget")
        y = np.array([1.0 if l == "target" else 0.0
                      for l in base.labels if l != "spoof"])
        cal = fit_calibration(scores, y)
        assert cal.scale > 0
        before = eer(base)
        mapped = ScoreSet(entries={k: apply_affine(v, cal)
                                   for k, v in asv.entries.items()})
        after = eer(labeled(mapped, trials))
        assert after == pytest.approx(before, abs=1e-12)


class TestJointFusion:
    def test_uninformative_cm_preserves_asv_ranking(self):
        trials, asv, cm = make_sasv_scores(4, n_spf=50)
        flat_cm = ScoreSet(entries={k: 0.7 for k in cm.entries})
        y = np.array([1.0 if t.label == "target" else 0.0 for t in trials])
        sa = np.array([asv.entries[t.trial_id] for t in trials])
        sc = np.array([flat_cm.entries[t.trial_id] for t in trials])
        model = fit_joint_fusion(sa, sc, y)
        fused = fuse_scores(asv, flat_cm, model)
        order_asv = sorted(asv.entries, key=asv.entries.get)
        order_fused = sorted(fused.entries, key=fused.entries.get)
        assert model.a_asv > 0
        assert order_asv == order_fused

    def test_complementary_systems_fuse_below_both(self):
        trials, asv, cm = make_sasv_scores(5)
        y = np.array([1.0 if t.label == "target" else 0.0 for t in trials])
        sa = np.array([asv.entries[t.trial_id] for t in trials])
        sc = np.array([cm.entries[t.trial_id] for t in trials])
        model = fit_joint_fusion(sa, sc, y)
        fused = fuse_scores(asv, cm, model)
        adcf_fused = a_dcf(labeled(fused, trials))[0]
        adcf_asv = a_dcf(labeled(asv, trials))[0]
        adcf_cm = a_dcf(labeled(cm, trials))[0]
        assert adcf_fused <= min(adcf_asv, adcf_cm) - 0.01

    def test_misaligned_inputs_rejected(self):
        with pytest.raises(ValueError, match="aligned"):
            fit_joint_fusion(np.zeros(3), np.zeros(4),
                             np.array([0.0, 1.0, 0.0]))


class TestStrategyEquivalence:
    @pytest.mark.parametrize("seed", range(10))
    def test_pre_calibration_absorbed_by_joint_stage(self, seed):
        trials, asv, cm = make_sasv_scores(100 + seed, n_tar=80, n_non=80,
                                           n_spf=80)
        y_sasv, y_cm, sa, sc = [], [], [], []
        for t in trials:
            sa.append(asv.entries[t.trial_id])
            sc.append(cm.entries[t.trial_id])
            y_sasv.append(1.0 if t.label == "target" else 0.0)
            y_cm.append(1.0 if t.label != "spoof" else 0.0)
        sa, sc = np.array(sa), np.array(sc)
        y_sasv, y_cm = np.array(y_sasv), np.array(y_cm)

        # strategy (a): per-system calibration, then the joint stage
        cal_asv = fit_calibration(sa, y_sasv)
        cal_cm = fit_calibration(sc, y_cm)
        model_pre = fit_joint_fusion(apply_affine(sa, cal_asv),
                                     apply_affine(sc, cal_cm), y_sasv)
        fused_pre = fuse_scores(asv, cm, model_pre,
                                cal_asv=cal_asv, cal_cm=cal_cm)
        # strategy (b): direct joint fusion of the raw scores
        model_joint = fit_joint_fusion(sa, sc, y_sasv)
        fused_joint = fuse_scores(asv, cm, model_joint)

        v_pre = a_dcf(labeled(fused_pre, trials))[0]
        v_joint = a_dcf(labeled(fused_joint, trials))[0]
        assert abs(v_pre - v_joint) < 1e-6


class TestFuseScores:
    def test_passthrough_models(self):
        trials, asv, cm = make_sasv_scores(6, n_tar=10, n_non=10, n_spf=10)
        only_asv = fuse_scores(asv, cm, JointFusionModel(1.0, 0.0, 0.0))
        assert only_asv.entries == asv.entries
        only_cm = fuse_scores(asv, cm, JointFusionModel(0.0, 1.0, 0.0))
        assert only_cm.entries == cm.entries

    def test_key_mismatch_listed(self):
        asv = ScoreSet(entries={"a": 1.0, "b": 2.0})
        cm = ScoreSet(entries={"a": 1.0, "c": 2.0})
        with pytest.raises(ValueError) as err:
            fuse_scores(asv, cm, JointFusionModel(1.0, 1.0, 0.0))
        assert "'b'" in str(err.value) and "'c'" in str(err.value)


class TestModelFiles:
    def test_affine_round_trip(self, tmp_path):
        path = tmp_path / "cal.txt"
        save_model(path, AffineCalibration(scale=1.25, bias=-0.5))
        back = load_model(path)
        assert isinstance(back, AffineCalibration)
        assert back == AffineCalibration(1.25, -0.5)

    def test_fusion_round_trip(self, tmp_path):
        path = tmp_path / "fuse.txt"
        model = JointFusionModel(a_asv=0.5, a_cm=2.0, bias=0.125)
        save_model(path, model)
        assert load_model(path) == model

    def test_bad_model_file(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("1.0 2.0 3.0 4.0\n")
        with pytest.raises(ValueError, match="2 or 3"):
            load_model(path)
