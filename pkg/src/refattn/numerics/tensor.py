"""Dense float64 arrays with define-by-run reverse-mode differentiation.

Every differentiable operation produces an :class:`NdArray` that remembers its
parents and a backward rule.  Calling :meth:`NdArray.backward` on a scalar
collects the reachable operations into a :class:`Tape` (recording order is a
topological order) and replays it in reverse.
"""
from __future__ import annotations

import contextlib
import itertools
import os
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import NumericalError, UsageError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_seq = itertools.count()
_state = {"grad": True, "debug": os.environ.get("REFATTN_DEBUG", "") not in ("", "0")}


def set_debug(flag: bool) -> None:
    """Check every kernel output for NaN/Inf when enabled."""
    _state["debug"] = bool(flag)


def grad_enabled() -> bool:
    return _state["grad"]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording inside the block."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        bad = int(arr.size - np.count_nonzero(np.isfinite(arr)))
        raise NumericalError(f"{what}: {bad} non-finite value(s) in array of shape {arr.shape}")


class NdArray:
    """Row-major float64 array that can participate in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "_op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        _check_finite(arr, "NdArray construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None
        self._seq = -1
        self._op = "leaf"

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["NdArray"], backward: BackwardFn,
                op: str) -> "NdArray":
        out = cls.__new__(cls)
        data = np.asarray(data, dtype=np.float64)
        out.data = data if data.flags.c_contiguous else data.copy()
        if _state["debug"]:
            _check_finite(out.data, f"kernel '{op}'")
        out.grad = None
        out._op = op
        track = _state["grad"] and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward = backward
            out._seq = next(_seq)
        else:
            out._parents = ()
            out._backward = None
            out._seq = -1
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "NdArray":
        return NdArray(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"NdArray(shape={self.shape}{flag}, op={self._op})"

    def __len__(self) -> int:
        return len(self.data)

    # -- differentiation --------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``grad`` of every requires_grad leaf."""
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward() on an array that is not on the tape")
        if self.is_leaf:
            self._accumulate(np.ones_like(self.data))
            return
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(Tape.from_output(self).ops):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            grads = node._backward(g)
            for parent, pg in zip(node._parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.is_leaf:
                    parent._accumulate(pg)
                elif id(parent) in pending:
                    pending[id(parent)] = pending[id(parent)] + pg
                else:
                    pending[id(parent)] = pg

    def _accumulate(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=np.float64).reshape(self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g


class Tape:
    """Recorded operations reachable from one output, in recording order.

    Recording order is topological because an operation can only consume
    arrays that already exist.
    """

    def __init__(self, ops: list):
        self.ops = ops

    @classmethod
    def from_output(cls, out: NdArray) -> "Tape":
        seen = set()
        ops = []
        stack = [out]
        while stack:
            node = stack.pop()
            if id(node) in seen or node.is_leaf:
                continue
            seen.add(id(node))
            ops.append(node)
            stack.extend(node._parents)
        ops.sort(key=lambda n: n._seq)
        return cls(ops)

    def __len__(self) -> int:
        return len(self.ops)


def as_array(x) -> NdArray:
    """Wrap numbers, numpy arrays and image planes as constant NdArrays; pass NdArrays through."""
    if isinstance(x, NdArray):
        return x
    return NdArray(getattr(x, "pixels", x))
