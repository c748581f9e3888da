"""Active-set geometries: grids, enlargements, tessellations, mesh grids.

An active set is a list of candidate jump locations inside the reduced
index box.  Each jump owns a k^d block of indices (its enlargement); a
hyperrectangular tessellation assigns each jump an axis-aligned cell
containing its block in the interior, with cells covering the reduced
box and overlapping at most on boundaries.  Mesh grids are the nested
multi-resolution geometry whose size grows like delta**(d*H(d)) with
H(d) the d-th harmonic number.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError


class TessellationError(ValueError):
    """No valid hyperrectangular tessellation for this active set."""


def harmonic_number(d):
    return sum(1.0 / i for i in range(1, d + 1))


def admissible_box(shape, k, margin="standard"):
    """Per-axis (lo, hi) bounds for jump coordinates, 1-based inclusive.

    "standard" leaves room for an interior jump block inside a cell of
    the reduced box; "matching" additionally reserves (k+2)*k indices on
    both sides so every tessellation interval can hold the pieces used
    by discrete derivative matching; "loose" only requires the enlarged
    block to fit in the reduced box.
    """
    if margin == "standard":
        lo_off, hi_off = k + 2, k
    elif margin == "matching":
        lo_off, hi_off = k + 1 + (k + 2) * k, k - 1 + (k + 2) * k
    elif margin == "loose":
        lo_off, hi_off = k + 1, k - 1
    else:
        raise ValueError(f"unknown margin {margin!r}")
    box = tuple((lo_off, n - hi_off) for n in shape)
    if any(lo > hi for lo, hi in box):
        raise ShapeError(f"shape {tuple(shape)} too small for k={k} ({margin} margins)")
    return box


@dataclass(frozen=True)
class ActiveSet:
    """Sorted jump locations (1-based multi-indices) for a given shape and order."""

    shape: tuple
    k: int
    jumps: tuple
    margin: str = "standard"

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        jumps = tuple(sorted(tuple(int(j) for j in t) for t in self.jumps))
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "jumps", jumps)
        if len(set(jumps)) != len(jumps):
            raise ShapeError("duplicate jump locations")
        box = admissible_box(shape, self.k, self.margin)
        for t in jumps:
            if len(t) != len(shape):
                raise ShapeError(f"jump {t} has wrong rank for shape {shape}")
            for (lo, hi), j in zip(box, t):
                if not lo <= j <= hi:
                    raise ShapeError(f"jump {t} outside admissible box {box}")

    @property
    def size(self):
        return len(self.jumps)


def regular_grid(shape, k, s_per_axis, margin="standard"):
    """Equispaced grid of s_per_axis**d jumps, centered in the admissible box."""
    if s_per_axis < 1:
        raise ShapeError("s_per_axis must be >= 1")
    box = admissible_box(shape, k, margin)
    per_axis = []
    for lo, hi in box:
        span = hi - lo
        coords = [lo + int(round((2 * j - 1) * span / (2.0 * s_per_axis))) for j in range(1, s_per_axis + 1)]
        if len(set(coords)) != s_per_axis:
            raise ShapeError(f"admissible box [{lo},{hi}] too small for {s_per_axis} distinct jumps")
        per_axis.append(coords)
    jumps = list(itertools.product(*per_axis))
    return ActiveSet(shape=shape, k=k, jumps=jumps, margin=margin)


def enlarge(aset):
    """Enlarged active set: the union of per-jump k^d index blocks.

    Returns an (m, d) int array of sorted unique multi-indices; m equals
    size * k**d exactly when no blocks overlap.
    """
    k = aset.k
    offs = np.array(list(itertools.product(range(k), repeat=len(aset.shape))), dtype=np.int64)
    pts = np.asarray(aset.jumps, dtype=np.int64)[:, None, :] + offs[None, :, :]
    pts = pts.reshape(-1, len(aset.shape))
    return np.unique(pts, axis=0)


@dataclass(frozen=True)
class Tessellation:
    """One axis-aligned cell per jump, covering the reduced box.

    Cells are closed integer boxes (lo_i, hi_i) that may share boundary
    coordinates.  Distances per axis: lower = t - lo, upper = hi - t - k + 1;
    the jump block [t : t+k-1] sits strictly inside the cell.
    """

    aset: ActiveSet
    cells: tuple = field(repr=False)

    @property
    def shape(self):
        return self.aset.shape

    @property
    def k(self):
        return self.aset.k

    def distances(self, m):
        """(lower, upper) distance vectors of jump m to its cell faces."""
        t = self.aset.jumps[m]
        cell = self.cells[m]
        lower = tuple(t[i] - cell[i][0] for i in range(len(t)))
        upper = tuple(cell[i][1] - t[i] - self.k + 1 for i in range(len(t)))
        return lower, upper

    def max_distance(self, axis):
        """Largest cell-face distance along one axis over all jumps."""
        best = 0
        for m in range(self.aset.size):
            lower, upper = self.distances(m)
            best = max(best, lower[axis], upper[axis])
        return best

    def find_cell(self, idx):
        """Index of the first cell containing a 1-based multi-index."""
        for m, cell in enumerate(self.cells):
            if all(lo <= j <= hi for (lo, hi), j in zip(cell, idx)):
                return m
        raise ShapeError(f"index {tuple(idx)} not covered by the tessellation")

    def validate(self):
        """Recompute the defining conditions from scratch; raise on failure."""
        d = len(self.shape)
        box_vol = 1
        for n in self.shape:
            box_vol *= n - self.k - 1
        vol = 0
        for cell, t in zip(self.cells, self.aset.jumps):
            cvol = 1
            for i, (lo, hi) in enumerate(cell):
                if not (self.k + 1 <= lo <= hi <= self.shape[i]):
                    raise TessellationError(f"cell {cell} leaves the reduced box")
                if not (lo < t[i] and t[i] + self.k - 1 < hi):
                    raise TessellationError(f"jump block of {t} not interior to {cell}")
                cvol *= hi - lo
            vol += cvol
        for (a, b) in itertools.combinations(self.cells, 2):
            if all(max(a[i][0], b[i][0]) < min(a[i][1], b[i][1]) for i in range(d)):
                raise TessellationError(f"cells {a} and {b} share interior points")
        if vol != box_vol:
            raise TessellationError(f"cells cover volume {vol} of {box_vol}")
        return True


def _split_candidates(jumps, axis, k):
    coords = sorted({t[axis] for t in jumps})
    out = []
    for a, b in zip(coords, coords[1:]):
        if b - a >= k + 1:
            left = sum(1 for t in jumps if t[axis] <= a)
            out.append((abs(len(jumps) - 2 * left), -(b - a), axis, a, b))
    return out


def tessellate(aset):
    """Default tessellation: recursive axis-aligned midpoint splitting.

    Between two separable groups of jumps the cut falls at the midpoint
    of the free gap, ties toward the lower index.  The construction is
    validated before returning.
    """
    d = len(aset.shape)
    k = aset.k
    cells = [None] * aset.size
    order = {t: m for m, t in enumerate(aset.jumps)}

    def recurse(jumps, box):
        if len(jumps) == 1:
            cells[order[jumps[0]]] = tuple(box)
            return
        cands = []
        for axis in range(d):
            cands.extend(_split_candidates(jumps, axis, k))
        if not cands:
            raise TessellationError(
                f"jumps {jumps} cannot be separated by an axis-aligned cut (need per-axis gaps >= k+1)"
            )
        _, _, axis, a, b = min(cands)
        cut = (a + k - 1 + b) // 2
        left = [t for t in jumps if t[axis] <= a]
        right = [t for t in jumps if t[axis] >= b]
        lbox, rbox = list(box), list(box)
        lbox[axis] = (box[axis][0], cut)
        rbox[axis] = (cut, box[axis][1])
        recurse(left, lbox)
        recurse(right, rbox)

    if aset.size == 0:
        raise TessellationError("empty active set")
    recurse(list(aset.jumps), [(k + 1, n) for n in aset.shape])
    tess = Tessellation(aset=aset, cells=tuple(cells))
    tess.validate()
    return tess


def _equispaced(lo, hi, m):
    span = hi - lo + 1
    vals = sorted({lo - 1 + int(round(j * span / float(m))) for j in range(1, m + 1)})
    return np.array(vals, dtype=np.int64)


def _nested_subsample(prev, m):
    pos = sorted({int(round(j * len(prev) / float(m))) - 1 for j in range(1, m + 1)})
    return prev[np.clip(pos, 0, len(prev) - 1)]


def admissible_level_tuples(d):
    """Tuples (l_1..l_d) in [d]^d with at most z entries <= z for every z."""
    out = []
    for tup in itertools.product(range(1, d + 1), repeat=d):
        if all(sum(1 for l in tup if l <= z) <= z for z in range(1, d + 1)):
            out.append(tup)
    return out


@dataclass(frozen=True)
class MeshGrid:
    """Nested multi-resolution active set.

    ``levels[i][l-1]`` holds the level-l index family of axis i, with
    level 1 the finest (about delta**(d/1) points) down to level d the
    coarsest, nested by construction.  The jump set is the union of the
    level products over all admissible level tuples.
    """

    shape: tuple
    k: int
    delta: int
    levels: tuple = field(repr=False)
    tuples: tuple
    jumps: np.ndarray = field(repr=False)
    enlarged: np.ndarray = field(repr=False)

    @property
    def size(self):
        return len(self.jumps)

    def to_active_set(self):
        return ActiveSet(shape=self.shape, k=self.k, jumps=[tuple(t) for t in self.jumps], margin="loose")


def mesh_grid(shape, k, delta):
    """Build a mesh grid; point counts per level follow delta**(d/l).

    Index positions are equispaced by rounding (duplicates removed) and
    deeper levels are subsampled from shallower ones, so the nesting
    Z(d) subset ... subset Z(1) holds exactly even when the axis length
    is not a multiple of the level counts.
    """
    d = len(shape)
    if delta < 1:
        raise ShapeError("delta must be >= 1")
    counts = [max(1, int(round(delta ** (d / float(l))))) for l in range(1, d + 1)]
    levels = []
    for n in shape:
        lo, hi = k + 1, n - k + 1
        if hi < lo:
            raise ShapeError(f"axis length {n} too small for k={k}")
        if counts[0] > hi - lo + 1:
            raise ShapeError(f"delta={delta} infeasible: wants {counts[0]} indices in [{lo},{hi}]")
        fam = [_equispaced(lo, hi, counts[0])]
        for l in range(1, d):
            fam.append(_nested_subsample(fam[-1], counts[l]))
        levels.append(tuple(fam))
    tuples = tuple(admissible_level_tuples(d))
    pts = []
    for tup in tuples:
        grids = np.meshgrid(*[levels[i][tup[i] - 1] for i in range(d)], indexing="ij")
        pts.append(np.stack([g.ravel() for g in grids], axis=1))
    jumps = np.unique(np.concatenate(pts, axis=0), axis=0)
    offs = np.array(list(itertools.product(range(k), repeat=d)), dtype=np.int64)
    enlarged = np.unique((jumps[:, None, :] + offs[None, :, :]).reshape(-1, d), axis=0)
    return MeshGrid(
        shape=tuple(int(n) for n in shape),
        k=k,
        delta=delta,
        levels=tuple(levels),
        tuples=tuples,
        jumps=jumps,
        enlarged=enlarged,
    )


def write_active_set(path, aset_or_points):
    """One 1-based multi-index per line, space-separated."""
    pts = aset_or_points.jumps if isinstance(aset_or_points, ActiveSet) else aset_or_points
    with open(path, "w") as fh:
        for t in pts:
            fh.write(" ".join(str(int(j)) for j in t) + "\n")


def read_active_set(path, shape, k, margin="standard"):
    jumps = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            jumps.append(tuple(int(tok) for tok in line.split()))
    return ActiveSet(shape=shape, k=k, jumps=jumps, margin=margin)
