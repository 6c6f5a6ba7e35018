"""Small dense numeric kernel shared by every other module.

All internal math runs in float64. Randomness goes through numpy's PCG64
generator so that any run is replayable bit-exactly from its seed on any
platform.
"""

import numpy as np

__all__ = [
    "softmax",
    "matmul",
    "column_stats",
    "make_rng",
    "derived_rng",
    "require_finite",
]


def require_finite(name, arr):
    """Raise ValueError if ``arr`` contains NaN or inf."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


def softmax(v):
    """Numerically stable softmax of a 1-d vector.

    The maximum is subtracted before exponentiation, so arbitrarily large
    inputs do not overflow. Output entries lie in (0, 1] and sum to 1.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("softmax expects a non-empty 1-d vector")
    require_finite("softmax input", v)
    e = np.exp(v - v.max())
    return e / e.sum()


def matmul(a, b):
    """Matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-d matrices")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"matmul shape mismatch: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def column_stats(m):
    """Per-column mean and population standard deviation over rows.

    Rows index time. The population divisor (N, not N-1) is used, matching
    per-instance feature normalization conventions; a single row therefore
    yields zero std.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValueError("column_stats expects a non-empty 2-d matrix")
    mean = m.mean(axis=0)
    std = m.std(axis=0)  # population (ddof=0)
    return mean, std


def make_rng(seed):
    """Deterministic generator (numpy PCG64). Same seed, same stream."""
    return np.random.default_rng(seed)


def derived_rng(seed, *stream):
    """Generator for a sub-stream, e.g. (seed, utterance_index).

    Uses numpy's SeedSequence spawning via an entropy list, so streams for
    different indices are independent and schedule-invariant.
    """
    return np.random.default_rng([int(seed)] + [int(s) for s in stream])
