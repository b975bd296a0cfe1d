"""Scalar cutoff calculus used throughout the solver.

``tk`` clips at height ``k`` and ``gk`` keeps the excess above the clip, so
``tk(s, k) + gk(s, k) == s`` exactly.  ``z_delta`` is the piecewise-linear
cutoff that equals 1 on ``[0, delta]``, falls linearly to 0 on
``[delta, 2*delta]`` and vanishes beyond; ``y_delta`` is its exact
antiderivative (closed form, constant ``3*delta/2`` past ``2*delta``).

All four functions accept floats or numpy arrays and are elementwise.
"""

from __future__ import annotations

import numpy as np

__all__ = ["tk", "gk", "z_delta", "y_delta"]


def _check_positive(value: float, name: str) -> None:
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")


def tk(s, k: float):
    """Clip ``s`` to the interval ``[-k, k]``."""
    _check_positive(k, "k")
    return np.clip(s, -k, k)


def gk(s, k: float):
    """Excess of ``s`` beyond the clip height ``k``: ``s - tk(s, k)``."""
    _check_positive(k, "k")
    return s - np.clip(s, -k, k)


def z_delta(s, delta: float):
    """Unit cutoff: 1 on ``[0, delta]``, ``2 - s/delta`` on ``[delta, 2*delta]``, else 0."""
    _check_positive(delta, "delta")
    s = np.asarray(s, dtype=float)
    out = np.clip(2.0 - s / delta, 0.0, 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def y_delta(s, delta: float):
    """Exact antiderivative of ``z_delta`` from 0: saturates at ``3*delta/2``."""
    _check_positive(delta, "delta")
    s = np.asarray(s, dtype=float)
    mid = 2.0 * s - 0.5 * delta - s * s / (2.0 * delta)
    out = np.where(s <= delta, s, np.where(s <= 2.0 * delta, mid, 1.5 * delta))
    if out.ndim == 0:
        return float(out)
    return out
