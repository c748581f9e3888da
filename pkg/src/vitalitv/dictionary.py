"""Per-axis truncated-monomial dictionaries and the ANOVA decomposition.

For one axis of length n and order k the "raw" dictionary has columns

    col_1  = all ones (step at 1),
    col_j  = order-(j-1) discrete monomial for j <= k,
    col_j  = truncated monomial of order k-1 starting at j, for j >= k+1,

built by the recursion col^k_j = sum_{l >= j} col^{k-1}_l / n.  Its
partially orthonormalized version keeps the span but makes the first k
columns mutually orthogonal with squared norm n and orthogonal to all
remaining columns.  The payoff is the exact identity

    diff_k(ortho col_j) = 0          for j <= k,
    diff_k(ortho col_j) = e_j        for j >= k+1,

so order-k differences act as coordinates in this dictionary.  Products
of per-axis columns give the d-dimensional atoms, and the head/tail
split per axis induces the orthogonal ANOVA decomposition into margin
components.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

from .diff_ops import OrderError
from .tensor import ShapeError, check_tensor, frobenius_sq


def monomial_basis(n, k):
    """All n columns of the raw order-k dictionary, built by the recursion."""
    if not 1 <= k <= n - 1:
        raise OrderError(f"order k={k} invalid for extent {n}")
    phi = np.tril(np.ones((n, n)))
    diag_cols = [phi[:, 0].copy()]
    for order in range(2, k + 1):
        suffix = np.flip(np.cumsum(np.flip(phi, axis=1), axis=1), axis=1) / n
        nxt = np.empty_like(phi)
        for j in range(order - 1):
            nxt[:, j] = diag_cols[j]
        nxt[:, order - 1 :] = suffix[:, order - 1 :]
        diag_cols.append(nxt[:, order - 1].copy())
        phi = nxt
    return phi


def monomial_column(n, k, j):
    """Closed form of raw column j (1-based), valid for j in [k:n].

    Entry j' is n**(1-k) * C(j'-j+k-1, k-1) for j' >= j and 0 below: the
    iterated partial sums of a unit step are binomial coefficients, of
    which the power form ((j'-j+1)/n)**(k-1) is only the leading term.
    """
    if not k <= j <= n:
        raise OrderError(f"closed form needs k <= j <= n, got j={j}, k={k}")
    col = np.zeros(n)
    jp = np.arange(j, n + 1)
    col[j - 1 :] = [comb(int(m) + k - 2, k - 1) for m in (jp - j + 1)]
    return col * float(n) ** (1 - k)


@dataclass(frozen=True)
class Dictionary1D:
    """Raw and partially orthonormalized dictionary for one axis."""

    n: int
    k: int
    phi: np.ndarray = field(repr=False)
    tphi: np.ndarray = field(repr=False)

    @property
    def null_basis(self):
        """First k orthogonalized columns; orthogonal, squared norm n each."""
        return self.tphi[:, : self.k]

    @property
    def tail(self):
        """Columns k+1..n: residuals of the raw tails after removing the head span."""
        return self.tphi[:, self.k :]

    def project_out_head(self, f, axis):
        """Apply I - P_head along ``axis`` of tensor ``f``."""
        u = self.null_basis
        proj = np.tensordot(u / self.n, np.tensordot(u, f, axes=([0], [axis])), axes=([1], [0]))
        return f - np.moveaxis(proj, 0, axis)


def build_dictionary(n, k):
    """Dictionary1D for one axis, partially orthonormalized.

    The first k columns come from Gram-Schmidt (one reorthogonalization
    pass) over the raw monomials, rescaled to squared norm n; the tails
    are raw truncated monomials minus their head-span projection.  The
    orthogonalization runs in extended precision before rounding to
    float64: order-k differences amplify representation noise by about
    2**k * n**(k-1), so the cheap extra digits keep the difference
    identity tight at the larger (n, k).
    """
    phi = monomial_basis(n, k)
    work = phi.astype(np.longdouble)
    u = np.empty((n, k), dtype=np.longdouble)
    root_n = np.sqrt(np.longdouble(n))
    for j in range(k):
        v = work[:, j].copy()
        for _ in range(2):
            for i in range(j):
                v -= (u[:, i] @ v) / n * u[:, i]
        norm = np.sqrt(v @ v)
        if not norm > n * 1e-13:
            raise ArithmeticError(f"rank deficiency at column {j + 1} (n={n}, k={k})")
        v *= root_n / norm
        u[:, j] = v
    tails = work[:, k:]
    tphi = np.concatenate([u, tails - u @ ((u.T @ tails) / n)], axis=1).astype(np.float64)
    phi.setflags(write=False)
    tphi.setflags(write=False)
    return Dictionary1D(n=n, k=k, phi=phi, tphi=tphi)


@lru_cache(maxsize=256)
def cached_dictionary(n, k):
    """Shared per-(n, k) dictionary; every margin of a fit reuses them."""
    return build_dictionary(int(n), int(k))


def axis_dictionaries(shape, k):
    return [cached_dictionary(n, k) for n in shape]


def product_atom(dicts, idx):
    """Outer product of the orthogonalized columns selected by a 1-based multi-index."""
    if len(idx) != len(dicts):
        raise ShapeError(f"index rank {len(idx)} vs {len(dicts)} axes")
    out = None
    for d1, j in zip(dicts, idx):
        if not 1 <= j <= d1.n:
            raise ShapeError(f"index {j} out of range [1, {d1.n}]")
        col = d1.tphi[:, j - 1]
        out = col if out is None else np.multiply.outer(out, col)
    return out


def project_margin(f, dicts):
    """Orthogonal projection onto the span of all-tail product atoms.

    This is the component of ``f`` annihilated by no axis: the input to
    the d-dimensional synthesis fit.
    """
    out = np.asarray(f, dtype=np.float64)
    for axis, d1 in enumerate(dicts):
        out = d1.project_out_head(out, axis)
    return out


@dataclass(frozen=True, order=True)
class MarginKey:
    """Identifies one margin component.

    ``axes``: sorted 0-based axes on which the component is free (tail
    span); ``h``: 1-based head-column choices for the remaining axes, in
    ascending axis order.
    """

    axes: tuple
    h: tuple

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(int(a) for a in self.axes))
        object.__setattr__(self, "h", tuple(int(x) for x in self.h))


def margin_keys(d, k):
    """All (axes, h) pairs: sum over subsets M of k**(d-|M|) keys."""
    keys = []
    for r in range(d + 1):
        for axes in itertools.combinations(range(d), r):
            for h in itertools.product(range(1, k + 1), repeat=d - r):
                keys.append(MarginKey(axes=axes, h=h))
    return keys


def margin_dimension(key, shape, k):
    dim = 1
    for a in key.axes:
        dim *= shape[a] - k
    return dim


def _apply_axis_matrix(mat, f, axis):
    return np.moveaxis(np.tensordot(mat, f, axes=([1], [axis])), 0, axis)


def anova_decompose(f, k, dicts=None):
    """Split ``f`` into mutually orthogonal margin components.

    Returns a dict MarginKey -> tensor (full shape).  Components sum to
    ``f`` exactly and satisfy the Parseval identity; each axis is split
    into its k head directions versus the tail span, so there are
    (k+1)**d components and their dimensions add up to the tensor size.
    """
    f = check_tensor(f)
    d = f.ndim
    if dicts is None:
        dicts = axis_dictionaries(f.shape, k)
    heads = []
    perps = []
    for d1 in dicts:
        u = d1.null_basis
        heads.append([np.outer(u[:, h], u[:, h]) / d1.n for h in range(k)])
        perps.append(np.eye(d1.n) - u @ u.T / d1.n)
    parts = {}
    for key in margin_keys(d, k):
        comp = f
        h_iter = iter(key.h)
        for axis in range(d):
            if axis in key.axes:
                comp = _apply_axis_matrix(perps[axis], comp, axis)
            else:
                comp = _apply_axis_matrix(heads[axis][next(h_iter) - 1], comp, axis)
        parts[key] = comp
    return parts


def margin_expand(fbar, key, dicts):
    """Rebuild the full-shape component from its |M|-dimensional core."""
    d = len(dicts)
    out = np.asarray(fbar, dtype=np.float64)
    for axis in range(d):
        if axis not in key.axes:
            out = np.expand_dims(out, axis)
    h_iter = iter(key.h)
    for axis in range(d):
        if axis in key.axes:
            continue
        col = dicts[axis].tphi[:, next(h_iter) - 1]
        shape = [1] * d
        shape[axis] = dicts[axis].n
        out = out * col.reshape(shape)
    return out


def margin_flatten(component, key, dicts, tol=1e-8):
    """Extract the |M|-dimensional core of a component living in one margin.

    The component factorizes over the axes outside M into fixed head
    columns of squared norm n_i, so contracting with column/n_i per axis
    inverts the expansion and preserves the normalized squared norm:
    ||component||^2 / n == ||core||^2 / n_M.
    """
    component = check_tensor(component, name="margin component")
    out = component
    h_iter = iter(key.h)
    # contract from the highest axis down so lower axis numbers stay valid
    drops = [a for a in range(len(dicts)) if a not in key.axes]
    cols = {}
    for axis in drops:
        cols[axis] = dicts[axis].tphi[:, next(h_iter) - 1]
    for axis in sorted(drops, reverse=True):
        out = np.tensordot(out, cols[axis] / dicts[axis].n, axes=([axis], [0]))
    residual = component - margin_expand(out, key, dicts)
    if frobenius_sq(residual) > (tol * np.sqrt(frobenius_sq(component)) + 1e-300) ** 2:
        raise ValueError(f"input is not in the margin subspace {key}")
    return out
