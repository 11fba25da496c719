"""Central finite differences, used as an independent check on :func:`backward`."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor


def numerical_gradient(f: Callable[[dict[str, Tensor]], Tensor],
                       params: Mapping[str, np.ndarray], h: float = 1e-5) -> dict[str, np.ndarray]:
    """Perturb every entry of every parameter by +-h and difference the scalar output."""
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    out = {}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = f({k: Tensor(v) for k, v in base.items()}).item()
            flat[i] = old - h
            fm = f({k: Tensor(v) for k, v in base.items()}).item()
            flat[i] = old
            g.reshape(-1)[i] = (fp - fm) / (2.0 * h)
        out[name] = g
    return out


def max_relative_error(analytic: Mapping[str, np.ndarray], numeric: Mapping[str, np.ndarray],
                       floor: float = 1e-5) -> float:
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries.

    The floor keeps round-off on near-zero entries from reading as a large
    relative error.
    """
    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
