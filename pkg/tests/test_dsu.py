import numpy as np
import pytest

from sasvkit.dsu import (DSUConfig, draw_noise, dsu_perturb, instance_stats,
                         perturb_with_backward)
from sasvkit.numerics import make_rng


def fixed_batch(seed=0, b=3, t=6, c=4, spread=1.0):
    rng = make_rng(seed)
    return [spread * rng.standard_normal((t, c)) + i for i, _ in
            enumerate(range(b))]


class TestInstanceStats:
    def test_constant_matrix(self):
        mu, sigma = instance_stats(np.full((4, 3), 2.5))
        assert np.allclose(mu, 2.5, atol=0)
        assert np.allclose(sigma, 0.0, atol=0)

    def test_single_frame(self):
        mu, sigma = instance_stats([[1.0, 2.0]])
        assert np.allclose(mu, [1.0, 2.0], atol=0)
        assert np.allclose(sigma, 0.0, atol=0)

    def test_two_frames(self):
        mu, sigma = instance_stats([[0.0], [2.0]])
        assert mu[0] == 1.0 and sigma[0] == 1.0


class TestPerturb:
    def test_p_zero_is_bit_exact_identity(self):
        batch = fixed_batch(1)
        out = dsu_perturb(batch, DSUConfig(probability=0.0), make_rng(2))
        for x, y in zip(batch, out):
            assert y is x or np.array_equal(x, y)

    def test_untriggered_draw_is_identity(self):
        batch = fixed_batch(3)
        # probability small enough that the first draw will not trigger
        out = dsu_perturb(batch, DSUConfig(probability=1e-12), make_rng(4))
        for x, y in zip(batch, out):
            assert np.array_equal(x, y)

    def test_single_instance_batch_is_noop_up_to_eps(self):
        x = make_rng(5).standard_normal((8, 3))
        cfg = DSUConfig(probability=1.0, eps_floor=1e-6)
        out = dsu_perturb([x], cfg, make_rng(6))[0]
        # Sigma_mu = Sigma_sigma = 0, so only sigma/(sigma+eps) rescaling remains
        _, sigma = instance_stats(x)
        bound = np.max(np.abs(x - x.mean(axis=0)) * cfg.eps_floor / (sigma + cfg.eps_floor))
        assert np.max(np.abs(out - x)) <= bound + 1e-15

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ValueError, match="channels"):
            dsu_perturb([np.zeros((3, 2)), np.zeros((3, 5))],
                        DSUConfig(), make_rng(0))

    def test_determinism_under_seed(self):
        batch = fixed_batch(7)
        cfg = DSUConfig(probability=1.0)
        a = dsu_perturb(batch, cfg, make_rng(8))
        b = dsu_perturb(batch, cfg, make_rng(8))
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_monte_carlo_expectation_preserved(self):
        # E[x~] = x because the jitters are zero-mean and independent
        rng = make_rng(9)
        base = [rng.standard_normal((5, 2)), 1.2 * rng.standard_normal((5, 2))]
        cfg = DSUConfig(probability=1.0)
        draws = 10000
        acc = [np.zeros_like(x) for x in base]
        noise_rng = make_rng(10)
        for _ in range(draws):
            out = dsu_perturb(base, cfg, noise_rng)
            for a, o in zip(acc, out):
                a += o
        for x, a in zip(base, acc):
            mean = a / draws
            # per-entry std of x~ is bounded by the style jitter scale; use
            # a conservative per-entry 3-sigma gate from the observed spread
            mus = np.stack([b.mean(axis=0) for b in base])
            sigmas = np.stack([b.std(axis=0) for b in base])
            jitter = np.sqrt(mus.std(axis=0) ** 2
                             + (sigmas.std(axis=0) * np.max(np.abs((x - x.mean(0)) / (x.std(0) + cfg.eps_floor)), axis=0)) ** 2)
            tol = 3.0 * jitter / np.sqrt(draws)
            assert np.all(np.abs(mean - x) <= tol + 1e-12)

    def test_frame_order_structure_preserved(self):
        # per channel the map is affine with nonnegative slope, so the
        # ranking of standardized values within a channel cannot change
        batch = fixed_batch(11, b=4, t=10, c=3)
        cfg = DSUConfig(probability=1.0)
        out = dsu_perturb(batch, cfg, make_rng(12))
        for x, y in zip(batch, out):
            for c in range(x.shape[1]):
                order_x = np.argsort(x[:, c], kind="stable")
                order_y = np.argsort(y[:, c], kind="stable")
                assert np.array_equal(order_x, order_y)

    def test_sigma_zero_channel_stays_finite(self):
        x1 = np.zeros((6, 2))
        x1[:, 1] = make_rng(13).standard_normal(6)
        x2 = np.ones((6, 2))
        x2[:, 1] = make_rng(14).standard_normal(6)
        out = dsu_perturb([x1, x2], DSUConfig(probability=1.0), make_rng(15))
        for y in out:
            assert np.all(np.isfinite(y))

    def test_negative_sigma_clamped(self):
        # huge uncertainty spread forces some sigma~ below zero pre-clamp
        rng = make_rng(16)
        batch = [0.01 * rng.standard_normal((6, 2)),
                 100.0 * rng.standard_normal((6, 2))]
        out, back = perturb_with_backward(
            batch, DSUConfig(probability=1.0), make_rng(17))
        assert back is not None
        for y in out:
            assert np.all(np.isfinite(y))


class TestBackward:
    @pytest.mark.parametrize("seed", range(8))
    def test_finite_difference_through_batch(self, seed):
        rng = make_rng(100 + seed)
        b, t, c = 3, 5, 4
        batch = [rng.standard_normal((t, c)) for _ in range(b)]
        cfg = DSUConfig(probability=1.0)
        noise = draw_noise(b, c, rng)
        proj = [rng.standard_normal((t, c)) for _ in range(b)]

        def loss(xs):
            out, _ = perturb_with_backward(xs, cfg, None, frozen_noise=noise)
            return sum(float(np.sum(p * o)) for p, o in zip(proj, out))

        _, back = perturb_with_backward(batch, cfg, None, frozen_noise=noise)
        analytic = back(proj)

        step = 1e-6
        for i in range(b):
            numeric = np.zeros((t, c))
            for ti in range(t):
                for ci in range(c):
                    pert = [x.copy() for x in batch]
                    pert[i][ti, ci] += step
                    up = loss(pert)
                    pert[i][ti, ci] -= 2 * step
                    down = loss(pert)
                    numeric[ti, ci] = (up - down) / (2 * step)
            err = np.abs(analytic[i] - numeric) / np.maximum(
                1.0, np.maximum(np.abs(analytic[i]), np.abs(numeric)))
            assert err.max() < 1e-4, f"instance {i}: {err.max():.3e}"
