"""Dense float32 tensors, elementary numerics, and the .bsat binary file format.

Every tensor handled by this package is a C-contiguous float32 numpy array.
Tensors are treated as immutable after construction: operations return fresh
arrays and never write into their inputs.

.bsat layout (all integers little-endian):

    bytes 0..3    magic "BSAT"
    bytes 4..7    version, u32 (currently 1)
    byte  8       dtype code, u8 (0 = float32)
    bytes 9..12   ndim, u32
    then          ndim dims, u64 each
    then          payload, float32, row-major
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"BSAT"
VERSION = 1
DTYPE_F32 = 0

_HEADER_FMT = "<4sIBI"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


class TensorFileError(ValueError):
    """Base class for .bsat parse failures."""


class BadMagicError(TensorFileError):
    pass


class UnsupportedDTypeError(TensorFileError):
    pass


class TruncatedPayloadError(TensorFileError):
    pass


def as_f32(x, name: str = "tensor") -> np.ndarray:
    """Validate and return ``x`` as a C-contiguous float32 array.

    Rejects non-finite entries and zero-sized dimensions.
    """
    a = np.ascontiguousarray(x, dtype=np.float32)
    if a.ndim == 0:
        raise ValueError(f"{name} must have at least one dimension")
    if min(a.shape) < 1:
        raise ValueError(f"{name} has a zero-sized dimension: {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite values")
    return a


def matmul(a, b) -> np.ndarray:
    """2-D matrix product with shape validation: (m,k) @ (k,n) -> (m,n)."""
    a = as_f32(a, "a")
    b = as_f32(b, "b")
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def row_softmax(a, scale: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``scale * a`` with subtract-max stabilization.

    Each output row sums to 1; entries lie in [0, 1]. Safe for rows with
    large magnitudes (e.g. [1000, 0]) because the row max is subtracted
    before exponentiation.
    """
    a = as_f32(a, "a")
    if a.ndim != 2:
        raise ValueError(f"row_softmax expects a 2-D input, got shape {a.shape}")
    z = a * np.float32(scale)
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def write_tensor(path, t) -> None:
    """Write a float32 tensor to ``path`` in .bsat format."""
    t = as_f32(t)
    header = struct.pack(_HEADER_FMT, MAGIC, VERSION, DTYPE_F32, t.ndim)
    dims = struct.pack(f"<{t.ndim}Q", *t.shape)
    with open(path, "wb") as f:
        f.write(header)
        f.write(dims)
        f.write(t.astype("<f4", copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a .bsat file back into a float32 array.

    Raises BadMagicError, UnsupportedDTypeError, or TruncatedPayloadError
    for the corresponding malformed inputs; the reader never returns a
    partially decoded tensor.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER_SIZE:
        raise TruncatedPayloadError(f"file too short for header: {len(raw)} bytes")
    magic, version, dtype, ndim = struct.unpack_from(_HEADER_FMT, raw, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise TensorFileError(f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise UnsupportedDTypeError(f"unsupported dtype code {dtype}")
    if ndim < 1:
        raise TensorFileError("ndim must be >= 1")
    dims_end = _HEADER_SIZE + 8 * ndim
    if len(raw) < dims_end:
        raise TruncatedPayloadError("file too short for dims")
    shape = struct.unpack_from(f"<{ndim}Q", raw, _HEADER_SIZE)
    if min(shape) < 1:
        raise TensorFileError(f"zero-sized dimension in {shape}")
    count = 1
    for d in shape:
        count *= d
    expected = dims_end + 4 * count
    if len(raw) < expected:
        raise TruncatedPayloadError(
            f"payload truncated: have {len(raw) - dims_end} bytes, need {4 * count}"
        )
    if len(raw) > expected:
        raise TensorFileError(f"{len(raw) - expected} trailing bytes after payload")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=dims_end)
    t = data.reshape(shape).astype(np.float32, copy=True)
    if not np.isfinite(t).all():
        raise TensorFileError("payload contains non-finite values")
    return t
