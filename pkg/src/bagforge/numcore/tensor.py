"""Dense 2-D tensor with an optional gradient buffer.

Everything the engine trains or differentiates is a row-major 2-D array
of one floating dtype.  float32 is the storage/runtime dtype; float64 is
supported so the verification harness can run the same code path at
higher precision.
"""

import numpy as np

from ..errors import NumericError, ShapeError

DEFAULT_DTYPE = np.float32
_ALLOWED = (np.float32, np.float64)


def _as_array(data, dtype) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got ndim={arr.ndim}")
    return np.ascontiguousarray(arr)


class Tensor:
    """A (rows, cols) float matrix, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        if dtype is None:
            dtype = getattr(data, "dtype", None)
            if dtype is None or dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
                dtype = DEFAULT_DTYPE
        if np.dtype(dtype).type not in _ALLOWED:
            raise ShapeError(f"unsupported dtype {dtype}")
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=self.requires_grad,
                      name=self.name, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{tag})"


def zeros(rows: int, cols: int, requires_grad: bool = False,
          name: str | None = None, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros((rows, cols), dtype=dtype), requires_grad, name, dtype)


def ensure_finite(arr: np.ndarray, op: str) -> np.ndarray:
    """Every forward op output must be finite; NaN/Inf is an error state."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")
    return arr
