"""Dense float64 tensors and the raw array math used by the layers.

Tensors are immutable value objects: every operation returns a new tensor,
and any operation that would produce a NaN/Inf raises instead of propagating
it. No gradient logic lives here.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

Scalar = Union[int, float]


class TensorError(ValueError):
    """Base class for tensor contract violations."""


class ShapeError(TensorError):
    """Operand shapes do not compose."""


class NonFiniteError(TensorError):
    """An operation produced (or received) NaN or Inf."""


class Tensor:
    """Immutable dense n-dimensional array of 64-bit floats.

    Data is stored row-major. The wrapped buffer is marked read-only;
    mutation happens only by constructing new tensors, so instances are
    safe to share across threads for reading.
    """

    __slots__ = ("_data",)

    def __init__(self, values, shape: Sequence[int] | None = None):
        arr = np.array(values, dtype=np.float64, order="C")
        if shape is not None:
            arr = arr.reshape(tuple(shape))
        if arr.ndim > 0 and any(d <= 0 for d in arr.shape):
            raise ShapeError(f"dimensions must be positive, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor contains NaN or Inf")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def wrap(cls, arr: np.ndarray) -> "Tensor":
        """Wrap an ndarray (copying) after validating finiteness."""
        return cls(arr)

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls(np.zeros(tuple(shape), dtype=np.float64))

    @property
    def data(self) -> np.ndarray:
        """Read-only ndarray view of the values."""
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def size(self) -> int:
        return self._data.size

    def tolist(self):
        return self._data.tolist()

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return Tensor(self._data.reshape(tuple(shape)))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Tensor) and np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash((self.shape, self._data.tobytes()))

    # Arithmetic is delegated to the module-level ops so that the error
    # contracts live in one place.

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__


def _binary(a: Tensor, b: Tensor, op) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    # overflow surfaces as NonFiniteError from the Tensor constructor
    with np.errstate(over="ignore", invalid="ignore"):
        return Tensor(op(a.data, b.data))


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.add)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.subtract)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _binary(a, b, np.multiply)


def scale(a: Tensor, s: Scalar) -> Tensor:
    s = float(s)
    if not np.isfinite(s):
        raise NonFiniteError("scale factor is not finite")
    return Tensor(a.data * s)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "scale": scale}


def elementwise(op: str, a: Tensor, b) -> Tensor:
    """Dispatch an elementwise op by name: add, sub, mul, or scale."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def frobenius_sq(a: Tensor) -> float:
    """Sum of squared elements (squared Frobenius norm)."""
    with np.errstate(over="ignore"):
        total = float(np.sum(a.data * a.data))
    if not np.isfinite(total):
        raise NonFiniteError("squared Frobenius norm overflowed")
    return total


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError("matmul expects rank-2 tensors")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return Tensor(a.data @ b.data)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    """Output extent of a convolution along one axis; errors unless exact."""
    span = size + 2 * padding - kernel
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"conv output size ({size} + 2*{padding} - {kernel}) / {stride} + 1 "
            "is not a positive integer"
        )
    return span // stride + 1


def conv2d_raw(x: np.ndarray, w: np.ndarray, stride: int, padding: int) -> np.ndarray:
    """Cross-correlation of a NCHW batch with an FCKK kernel (ndarray level).

    Shared by the Tensor op and the conv layer; the test oracle deliberately
    does not use this routine.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d expects input NxCxHxW and kernel FxCxKhxKw")
    n, c, h, wd = x.shape
    f, ck, kh, kw = w.shape
    if ck != c:
        raise ShapeError(f"channel mismatch: input has {c}, kernel expects {ck}")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(wd, kw, stride, padding)
    cols = _conv_windows(x, kh, kw, stride, padding, oh, ow)
    return np.einsum("nchwkl,fckl->nfhw", cols, w, optimize=True)


def _conv_windows(x, kh, kw, stride, padding, oh, ow):
    """Strided sliding-window view (N,C,OH,OW,KH,KW) over the padded input."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sn, sc, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        shape=(x.shape[0], x.shape[1], oh, ow, kh, kw),
        strides=(sn, sc, stride * sh, stride * sw, sh, sw),
        writeable=False,
    )


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (deep-learning convention: no kernel flip)."""
    return Tensor(conv2d_raw(x.data, kernel.data, stride, padding))
