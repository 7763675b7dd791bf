"""Central finite differences, used as an independent gradient oracle."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from ..errors import InvalidArgumentError, NumericError


def finite_diff_grad(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: float = 1e-4,
    indices: Iterable[int] | None = None,
) -> np.ndarray:
    """Estimate the gradient of scalar ``f`` at ``x`` by central differences.

    ``indices`` restricts the estimate to some flat coordinates; the others
    are left at zero. ``x`` is not modified.
    """
    if h <= 0:
        raise InvalidArgumentError(f"step h must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    coords = range(flat.size) if indices is None else indices
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        up = float(f(x))
        flat[i] = orig - h
        down = float(f(x))
        flat[i] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericError(f"non-finite function value while perturbing coordinate {i}")
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative error ``|a - b| / max(|a|, |b|)``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
