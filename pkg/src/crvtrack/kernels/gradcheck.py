"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..core import CrvError


class NumericError(CrvError, ArithmeticError):
    pass


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, epsilon: float, coords=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    grad = np.full(x.size, np.nan)
    idx = range(x.size) if coords is None else coords
    for i in idx:
        step = np.zeros(x.size)
        step[i] = epsilon
        hi = fn((x + step).reshape(x.shape))
        lo = fn((x - step).reshape(x.shape))
        grad[i] = (hi - lo) / (2 * epsilon)
    return grad.reshape(x.shape)


def finite_diff_grad_check(
    fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    params: np.ndarray,
    epsilon: float = 1e-5,
    skip: np.ndarray | None = None,
) -> float:
    """Max over coordinates of ``|fd - analytic| / max(1, |analytic|)``.

    ``skip`` flags coordinates sitting too close to a kink for central
    differences to be meaningful.
    """
    x = np.asarray(params, dtype=float).ravel()
    analytic = np.asarray(grad_fn(x.copy()), dtype=float).ravel()
    if analytic.shape != x.shape:
        raise ValueError(f"gradient shape {analytic.shape} does not match params {x.shape}")
    keep = np.ones(x.size, dtype=bool) if skip is None else ~np.asarray(skip, dtype=bool).ravel()
    coords = np.flatnonzero(keep)
    fd = central_difference(fn, x, epsilon, coords)
    vals = np.concatenate([analytic, fd[coords], [fn(x)]])
    if not np.all(np.isfinite(vals)):
        raise NumericError("non-finite loss or gradient during the check")
    if coords.size == 0:
        return 0.0
    err = np.abs(fd[coords] - analytic[coords]) / np.maximum(1.0, np.abs(analytic[coords]))
    return float(err.max())
