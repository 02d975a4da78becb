"""Central finite differences, used as the independent oracle for backward()."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor, no_grad


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        v = v.data
    return float(np.asarray(v).reshape(-1)[0])


def finite_diff_grad(f: Callable[[], object] | Callable[[Tensor], object], x: Tensor,
                     step: float = 1e-5, indices: Iterable[tuple] | None = None,
                     pass_x: bool = True) -> np.ndarray:
    """Estimate df/dx by (f(x + h e_i) - f(x - h e_i)) / 2h.

    ``x`` is perturbed in place and restored after each probe, so ``f`` may
    close over it (``pass_x=False``) instead of taking it as an argument.
    When ``indices`` is given only those coordinates are probed and the
    remaining entries of the result are NaN.
    """
    call = (lambda: f(x)) if pass_x else f
    out = np.full(x.shape, np.nan) if indices is not None else np.zeros(x.shape)
    idx_iter = list(indices) if indices is not None else list(np.ndindex(*x.shape))
    with no_grad():
        for idx in idx_iter:
            orig = x.data[idx]
            x.data[idx] = orig + step
            hi = _scalar(call())
            x.data[idx] = orig - step
            lo = _scalar(call())
            x.data[idx] = orig
            out[idx] = (hi - lo) / (2.0 * step)
    return out


def relative_error(analytic, numeric, floor: float = 1e-12) -> float:
    """Norm-wise relative error ||a - n|| / (||a|| + ||n||)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def sample_indices(shape: tuple, count: int, rng) -> list[tuple]:
    """Up to ``count`` distinct flat positions of ``shape``, as index tuples."""
    total = int(np.prod(shape))
    if total <= count:
        return list(np.ndindex(*shape))
    flat = np.sort(rng.permutation(total)[:count])
    return [tuple(int(v) for v in np.unravel_index(i, shape)) for i in flat]
