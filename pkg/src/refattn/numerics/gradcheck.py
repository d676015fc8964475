"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import NdArray, no_grad


@dataclass
class GradcheckResult:
    max_rel_error: float
    per_input: list = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(1, |a|), elementwise."""
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))


def gradcheck(fn: Callable[..., NdArray], inputs: Sequence[np.ndarray], h: float = 1e-5,
              max_entries: Optional[int] = None, seed: int = 0) -> GradcheckResult:
    """Compare tape gradients of scalar ``fn(*inputs)`` with central differences.

    ``max_entries`` caps how many entries per input are probed; the subset is
    drawn from ``seed``.
    """
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [NdArray(x, requires_grad=True) for x in inputs]
    fn(*leaves).backward()
    rng = np.random.default_rng(seed)
    per_input = []
    for pos, x in enumerate(inputs):
        analytic = leaves[pos].grad
        if analytic is None:
            analytic = np.zeros_like(x)
        flat = np.arange(x.size)
        if max_entries is not None and x.size > max_entries:
            flat = np.sort(rng.choice(x.size, size=max_entries, replace=False))
        numeric = np.empty(len(flat))
        with no_grad():
            for n, i in enumerate(flat):
                idx = np.unravel_index(i, x.shape)
                bumped = [NdArray(v) for v in inputs]
                bumped[pos].data[idx] += h
                hi = fn(*bumped).item()
                bumped[pos].data[idx] -= 2 * h
                lo = fn(*bumped).item()
                numeric[n] = (hi - lo) / (2 * h)
        err = rel_error(analytic.ravel()[flat], numeric)
        per_input.append(float(err.max()) if err.size else 0.0)
    return GradcheckResult(max(per_input) if per_input else 0.0, per_input)
