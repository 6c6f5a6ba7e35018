import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasvkit.numerics import column_stats, derived_rng, make_rng, matmul, softmax


def high_precision_softmax(values):
    """Independent oracle: direct formula at 50-digit precision."""
    with mpmath.workdps(50):
        exps = [mpmath.exp(v) for v in values]
        total = sum(exps)
        return [float(e / total) for e in exps]


class TestSoftmax:
    def test_symmetric_input(self):
        out = softmax([0.0, 0.0, 0.0])
        assert np.allclose(out, [1 / 3] * 3, atol=0, rtol=0)

    def test_large_input_no_overflow(self):
        out = softmax([1000.0, 0.0])
        assert np.isfinite(out).all()
        assert out[0] == pytest.approx(1.0, abs=1e-12)
        assert out[1] < 1e-300

    def test_matches_high_precision_reference(self):
        v = [1.0, 2.0, 3.0]
        expect = high_precision_softmax(v)
        assert np.allclose(softmax(v), expect, rtol=1e-14, atol=0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            softmax([1.0, float("nan")])
        with pytest.raises(ValueError):
            softmax([float("inf"), 0.0])

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=16),
           st.floats(-100, 100))
    @settings(max_examples=200)
    def test_sums_to_one_and_shift_invariant(self, values, shift):
        out = softmax(values)
        assert abs(out.sum() - 1.0) <= 1e-12
        assert (out > 0).all()
        shifted = softmax([v + shift for v in values])
        assert np.allclose(out, shifted, atol=1e-12)


class TestMatmul:
    def test_identity(self):
        rng = make_rng(0)
        a = rng.standard_normal((3, 3))
        assert np.allclose(matmul(a, np.eye(3)), a, atol=0)

    def test_scalar_case(self):
        assert matmul([[2.0]], [[3.0]])[0, 0] == 6.0

    def test_against_naive_triple_loop(self):
        rng = make_rng(7)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        naive = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    naive[i, j] += a[i, k] * b[k, j]
        assert np.allclose(matmul(a, b), naive, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))


class TestColumnStats:
    def test_constant_column(self):
        mean, std = column_stats(np.full((5, 2), 4.25))
        assert np.allclose(mean, 4.25, atol=0)
        assert np.allclose(std, 0.0, atol=0)

    def test_single_row(self):
        mean, std = column_stats([[1.0, -2.0, 3.0]])
        assert np.allclose(mean, [1.0, -2.0, 3.0], atol=0)
        assert np.allclose(std, 0.0, atol=0)

    def test_two_rows_population_std(self):
        mean, std = column_stats([[1.0], [3.0]])
        assert mean[0] == 2.0
        assert std[0] == 1.0  # population divisor, not N-1

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            column_stats(np.zeros((0, 3)))

    @given(st.integers(2, 8), st.integers(1, 5), st.integers(0, 2**31),
           st.floats(-10, 10))
    @settings(max_examples=100)
    def test_permutation_and_shift(self, rows, cols, seed, shift):
        rng = make_rng(seed)
        m = rng.standard_normal((rows, cols))
        mean, std = column_stats(m)
        perm = rng.permutation(rows)
        _, std_p = column_stats(m[perm])
        assert np.allclose(std, std_p, atol=1e-12)
        mean_s, std_s = column_stats(m + shift)
        assert np.allclose(mean_s, mean + shift, atol=1e-9)
        assert np.allclose(std_s, std, atol=1e-9)


class TestRng:
    def test_same_seed_same_stream(self):
        a = make_rng(42).standard_normal(10)
        b = make_rng(42).standard_normal(10)
        assert np.array_equal(a, b)

    def test_derived_streams_independent_of_order(self):
        first = [derived_rng(5, 1, i).standard_normal(4) for i in (0, 1, 2)]
        second = [derived_rng(5, 1, i).standard_normal(4) for i in (2, 0, 1)]
        assert np.array_equal(first[0], second[1])
        assert np.array_equal(first[2], second[0])

    def test_known_algorithm(self):
        # the generator is documented as PCG64
        assert make_rng(0).bit_generator.__class__.__name__ == "PCG64"
