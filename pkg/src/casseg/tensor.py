"""Minimal immutable dense tensor.

Storage is a read-only, C-ordered float64 numpy array. The rest of the
package works on plain ndarrays; ``Tensor`` exposes ``__array__`` so it can
be handed to any of them directly.
"""

from __future__ import annotations

from typing import Callable, Sequence, Union

import numpy as np

from .errors import NumericError, ShapeError

Fill = Union[float, Sequence[float], np.ndarray]


class Tensor:
    __slots__ = ("_data",)

    def __init__(self, shape: Sequence[int], fill: Fill = 0.0):
        shape = tuple(int(s) for s in shape)
        if any(s < 0 for s in shape):
            raise ShapeError(f"negative extent in shape {shape}")
        size = int(np.prod(shape, dtype=np.int64))
        if np.isscalar(fill):
            data = np.full(shape, float(fill), dtype=np.float64)
        else:
            flat = np.asarray(fill, dtype=np.float64).ravel()
            if flat.size != size:
                raise ShapeError(
                    f"{flat.size} values given for shape {shape} ({size} required)"
                )
            data = flat.reshape(shape).copy()
        self._data = _freeze(data)

    @classmethod
    def from_array(cls, array) -> "Tensor":
        arr = np.asarray(array, dtype=np.float64)
        return cls(arr.shape, arr)

    @property
    def shape(self) -> tuple:
        return self._data.shape

    @property
    def rank(self) -> int:
        return self._data.ndim

    @property
    def data(self) -> tuple:
        """Flat row-major values."""
        return tuple(self._data.ravel().tolist())

    def numpy(self) -> np.ndarray:
        return self._data

    def __array__(self, dtype=None, copy=None):
        if dtype is not None and np.dtype(dtype) != self._data.dtype:
            return self._data.astype(dtype)
        if copy:
            return self._data.copy()
        return self._data

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash((self.shape, self._data.tobytes()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, data={self._data.tolist()})"


def _freeze(arr: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError("tensor values must be finite")
    arr = np.array(arr, dtype=np.float64, order="C")
    arr.flags.writeable = False
    return arr


def _wrap(arr: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    out._data = _freeze(np.array(arr, dtype=np.float64))
    return out


def construct(shape: Sequence[int], fill: Fill = 0.0) -> Tensor:
    return Tensor(shape, fill)


def zip_map(a: Tensor, b: Tensor, f: Callable[[float, float], float]) -> Tensor:
    """Apply ``f`` elementwise to two tensors of identical shape.

    numpy ufuncs run vectorized; any other callable is applied per element.
    """
    if a.shape != b.shape:
        raise ShapeError(f"zip_map shape mismatch: {a.shape} vs {b.shape}")
    x, y = np.asarray(a), np.asarray(b)
    if isinstance(f, np.ufunc):
        out = f(x, y)
    else:
        out = np.fromiter(
            (f(float(u), float(v)) for u, v in zip(x.ravel(), y.ravel())),
            dtype=np.float64,
            count=x.size,
        ).reshape(x.shape)
    return _wrap(out)


_REDUCERS = {"sum": np.sum, "mean": np.mean, "max": np.max}


def reduce(a: Tensor, axis: int | None = None, kind: str = "sum") -> Tensor:
    """Reduce over one axis, or over everything when ``axis`` is None.

    Full reductions return a rank-0 tensor.
    """
    if kind not in _REDUCERS:
        raise ValueError(f"unknown reduction {kind!r}")
    if axis is not None and not 0 <= axis < a.rank:
        raise ShapeError(f"axis {axis} out of range for rank {a.rank}")
    x = np.asarray(a)
    if x.size == 0 and kind != "sum":
        raise ShapeError(f"{kind} of an empty tensor")
    return _wrap(_REDUCERS[kind](x, axis=axis))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.rank != 2 or b.rank != 2:
        raise ShapeError("matmul needs two rank-2 tensors")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} @ {b.shape}")
    return _wrap(np.asarray(a) @ np.asarray(b))
