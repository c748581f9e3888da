"""Dense d-dimensional tensor helpers.

Tensors are plain ``numpy.ndarray`` objects in float64, C (row-major)
order.  Public index arguments are 1-based tuples ``(j_1, ..., j_d)`` to
match the usual mathematical convention for grids; internal offsets are
0-based.  All functions here are pure.
"""

from __future__ import annotations

import struct

import numpy as np

VTF_MAGIC = b"VTF1"


class ShapeError(ValueError):
    """Operands have incompatible shapes or invalid extents."""


def check_tensor(f, name="tensor"):
    """Validate and return ``f`` as a finite float64 C-order array.

    Raises ShapeError for empty axes and ValueError for NaN/Inf entries.
    """
    arr = np.ascontiguousarray(f, dtype=np.float64)
    if arr.ndim == 0:
        raise ShapeError(f"{name} must have at least one axis")
    if any(n < 1 for n in arr.shape):
        raise ShapeError(f"{name} has an empty axis: shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def outer_product(factors):
    """Tensor with product structure: result(j_1,..,j_d) = prod_i factor_i(j_i)."""
    if not factors:
        raise ShapeError("need at least one factor")
    vecs = []
    for i, v in enumerate(factors):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ShapeError(f"factor {i} must be a nonempty vector")
        vecs.append(v)
    out = vecs[0]
    for v in vecs[1:]:
        out = np.multiply.outer(out, v)
    return out


def inner_product(f, g):
    """Sum of the entrywise product of two tensors of identical shape."""
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.shape != g.shape:
        raise ShapeError(f"shape mismatch: {f.shape} vs {g.shape}")
    return float(np.vdot(f, g))


def frobenius_sq(f):
    """Squared Frobenius norm: sum of squared entries."""
    f = np.asarray(f, dtype=np.float64)
    return float(np.vdot(f, f))


def l1_norm(f):
    """Sum of absolute values of the entries."""
    return float(np.abs(np.asarray(f, dtype=np.float64)).sum())


def multi_to_flat(idx, shape):
    """Row-major offset (0-based) of a 1-based multi-index."""
    idx = tuple(int(j) for j in idx)
    if len(idx) != len(shape):
        raise ShapeError(f"index rank {len(idx)} vs tensor rank {len(shape)}")
    for j, n in zip(idx, shape):
        if not 1 <= j <= n:
            raise ShapeError(f"index {idx} out of range for shape {tuple(shape)}")
    return int(np.ravel_multi_index(tuple(j - 1 for j in idx), tuple(shape)))

def flat_to_multi(offset, shape):
    """Inverse of multi_to_flat: 1-based multi-index of a row-major offset."""
    n = int(np.prod(shape))
    if not 0 <= offset < n:
        raise ShapeError(f"offset {offset} out of range for shape {tuple(shape)}")
    return tuple(int(c) + 1 for c in np.unravel_index(int(offset), tuple(shape)))


def write_vtf(path, f):
    """Write a tensor in the VTF1 binary format.

    Layout: magic ``VTF1``, uint32-le rank d, d uint32-le extents, then
    the n float64-le values in row-major order.
    """
    f = check_tensor(f)
    with open(path, "wb") as fh:
        fh.write(VTF_MAGIC)
        fh.write(struct.pack("<I", f.ndim))
        fh.write(struct.pack(f"<{f.ndim}I", *f.shape))
        fh.write(f.astype("<f8").tobytes(order="C"))


def read_vtf(path):
    """Read a tensor written by write_vtf."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != VTF_MAGIC:
            raise ValueError(f"{path}: not a VTF1 file (magic {magic!r})")
        (d,) = struct.unpack("<I", fh.read(4))
        if d == 0 or d > 32:
            raise ValueError(f"{path}: implausible rank {d}")
        shape = struct.unpack(f"<{d}I", fh.read(4 * d))
        n = int(np.prod(shape))
        data = np.frombuffer(fh.read(8 * n), dtype="<f8", count=n)
        if data.size != n:
            raise ValueError(f"{path}: truncated payload")
    return check_tensor(data.reshape(shape), name=str(path))
