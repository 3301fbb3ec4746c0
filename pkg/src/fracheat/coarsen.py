"""Coarse grid construction by fine-cell agglomeration.

The pipeline combines a flow indicator (time-of-flight), a fracture-distance
indicator and an optional structured blocking, intersects the partitions,
separates hybrid cells so that no coarse cell mixes fracture and matrix fine
cells, and splits everything into connected components.  Coarse cells smaller
than a threshold can be merged into their best like-kind neighbor.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_array
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .mesh import GridError, distance_to_fracture

logger = logging.getLogger(__name__)


class Partition:
    """Surjective fine-cell to coarse-cell map over a fixed grid."""

    def __init__(self, grid, labels, compact=True):
        self.grid = grid
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (grid.n_cells,):
            raise GridError("partition labels must cover every fine cell")
        if compact:
            _, labels = np.unique(labels, return_inverse=True)
        self.labels = labels
        self._interfaces = None

    @property
    def n_coarse(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def sizes(self):
        return np.bincount(self.labels, minlength=self.n_coarse)

    def cells_of(self, coarse):
        return np.nonzero(self.labels == coarse)[0]

    def coarse_kinds(self):
        """Per-coarse-cell kind: 'matrix', 'fracture' or 'mixed'."""
        frac = self.grid.is_fracture
        n_frac = np.bincount(self.labels, weights=frac, minlength=self.n_coarse)
        sizes = self.sizes()
        kinds = np.where(n_frac == 0, "matrix", np.where(n_frac == sizes, "fracture", "mixed"))
        return kinds

    def interfaces(self):
        """Map (k, l) with k < l to the fine connection indices crossing it."""
        if self._interfaces is None:
            li = self.labels[self.grid.conn_cells[:, 0]]
            lj = self.labels[self.grid.conn_cells[:, 1]]
            cross = li != lj
            store: dict = {}
            for idx in np.nonzero(cross)[0]:
                a, b = int(li[idx]), int(lj[idx])
                key = (a, b) if a < b else (b, a)
                store.setdefault(key, []).append(int(idx))
            self._interfaces = {k: np.array(v, dtype=np.int64) for k, v in store.items()}
        return self._interfaces

    def validate(self, require_pure=True, require_connected=True):
        if require_pure and np.any(self.coarse_kinds() == "mixed"):
            raise GridError("partition mixes fracture and matrix cells in a coarse cell")
        if require_connected:
            split = enforce_connected(self)
            if split.n_coarse != self.n_coarse:
                raise GridError("partition has disconnected coarse cells")

    def __eq__(self, other):
        """Equality up to relabeling."""
        if not isinstance(other, Partition):
            return NotImplemented
        if self.labels.shape != other.labels.shape:
            return False
        a = np.unique(self.labels, return_inverse=True)[1]
        b = np.unique(other.labels, return_inverse=True)[1]
        # same label classes iff the pairing (a, b) is a bijection
        pairs = np.unique(np.stack([a, b], axis=1), axis=0)
        return (
            pairs.shape[0] == len(np.unique(a))
            and pairs.shape[0] == len(np.unique(b))
        )

    def __hash__(self):  # partitions are mutable containers; identity hash
        return id(self)


# ---------------------------------------------------------------------------
# Indicators
# ---------------------------------------------------------------------------


@dataclass
class IndicatorField:
    """Per-fine-cell scalar with its binning specification."""

    values: np.ndarray
    bins: int = 6
    log: bool = True


def compute_tof(grid, flux, porosity):
    """Forward time-of-flight from injectors along the flux field.

    Solves the upwind steady transport for the travel time: each cell's TOF
    is (pore volume + inflow-weighted upstream TOFs) / total inflow, zero at
    injector cells.  Cells without significant inflow (stagnant zones) are
    capped at 10x the largest swept TOF so that log-binning stays finite.
    """
    n = grid.n_cells
    phi = np.broadcast_to(np.asarray(porosity, dtype=float), (n,)).copy()
    phi[grid.is_fracture] = 1.0
    pore = phi * grid.cell_measure

    v = flux.conn_flux
    i, j = grid.conn_cells[:, 0], grid.conn_cells[:, 1]
    vmax = np.abs(v).max() if v.size else 0.0
    injectors = flux.source > 0
    inflow_bnd = np.zeros(n)
    vb = flux.boundary_flux
    np.add.at(inflow_bnd, grid.bface_cell[vb < 0], -vb[vb < 0])
    if not injectors.any() and not inflow_bnd.any():
        raise GridError("time-of-flight needs at least one inflow source")
    if vmax == 0.0 and not inflow_bnd.any():
        raise GridError("time-of-flight needs a nonzero flux field")

    thresh = 1e-12 * max(vmax, inflow_bnd.max() if inflow_bnd.size else 0.0)
    sig = np.abs(v) > thresh
    src = np.where(v >= 0, i, j)[sig]
    dst = np.where(v >= 0, j, i)[sig]
    mag = np.abs(v)[sig]

    order = np.argsort(src, kind="stable")
    src_s, dst_s, mag_s = src[order], dst[order], mag[order]
    out_start = np.searchsorted(src_s, np.arange(n + 1))

    indeg = np.bincount(dst, minlength=n)
    indeg[injectors] = 0  # injector TOF is pinned, in-edges need not resolve

    total_in = np.zeros(n)
    np.add.at(total_in, dst, mag)
    total_in += inflow_bnd

    tof = np.full(n, np.inf)
    acc = np.zeros(n)  # inflow-weighted upstream TOF sum (boundary inflow has TOF 0)

    ready = deque(sorted(np.nonzero(indeg == 0)[0].tolist()))
    done = 0
    while ready:
        c = ready.popleft()
        done += 1
        if injectors[c]:
            tof[c] = 0.0
        elif total_in[c] > thresh:
            tof[c] = (pore[c] + acc[c]) / total_in[c]
        # else stagnant: capped below
        for e in range(out_start[c], out_start[c + 1]):
            d = dst_s[e]
            if np.isfinite(tof[c]):
                acc[d] += mag_s[e] * tof[c]
            else:
                # downstream of a stagnant cell: drop the contribution and
                # the inflow so the receiver does not inherit infinity
                total_in[d] -= mag_s[e]
            indeg[d] -= 1
            if indeg[d] == 0:
                ready.append(d)
    if done != n:
        raise GridError("cyclic flux graph encountered in time-of-flight solve")

    swept = np.isfinite(tof) & (tof > 0)
    cap = 10.0 * tof[swept].max() if swept.any() else 1.0
    tof[~np.isfinite(tof)] = cap
    unswept = (total_in <= thresh) & ~injectors
    tof[unswept] = cap
    return IndicatorField(values=tof, bins=6, log=True)


# ---------------------------------------------------------------------------
# Partitions
# ---------------------------------------------------------------------------


def _components_within_labels(grid, labels):
    """Split every label class into connected components of the fine graph."""
    li = labels[grid.conn_cells[:, 0]]
    lj = labels[grid.conn_cells[:, 1]]
    same = li == lj
    n = grid.n_cells
    i = grid.conn_cells[same, 0]
    j = grid.conn_cells[same, 1]
    ones = np.ones(len(i), dtype=np.int8)
    sub = csr_array(
        (np.concatenate([ones, ones]), (np.concatenate([i, j]), np.concatenate([j, i]))),
        shape=(n, n),
    )
    _, comp = connected_components(sub, directed=False)
    return comp


def _from_labels(grid, labels, split=True):
    if split:
        labels = _components_within_labels(grid, np.asarray(labels, dtype=np.int64))
    return Partition(grid, labels)


def indicator_partition(grid, field, bins=None):
    """Equal-width binning of log10(indicator), then connected components.

    Nonpositive values are clamped into the lowest bin; a constant field
    yields one coarse cell per connected component of the grid.
    """
    g = bins if bins is not None else field.bins
    if g < 1:
        raise ValueError("need at least one bin")
    vals = np.asarray(field.values, dtype=float)
    if field.log:
        pos = vals[vals > 0]
        if pos.size == 0:
            binned = np.zeros(len(vals), dtype=np.int64)
            return _from_labels(grid, binned)
        lo, hi = np.log10(pos.min()), np.log10(pos.max())
        x = np.log10(np.maximum(vals, pos.min()))
    else:
        lo, hi = vals.min(), vals.max()
        x = vals
    if hi - lo < 1e-12:
        binned = np.zeros(len(vals), dtype=np.int64)
    else:
        binned = np.clip(((x - lo) / (hi - lo) * g).astype(np.int64), 0, g - 1)
    return _from_labels(grid, binned)


def distance_partition(grid, distance=None, widths=(1.0,)):
    """Partition matrix cells into rings of given widths around the fractures.

    widths are consecutive band widths in meters starting from the fracture
    (e.g. [10, 20, 40] makes bands [0,10), [10,30), [30,70), [70,inf)).
    """
    widths = np.asarray(widths, dtype=float)
    if np.any(widths <= 0):
        raise ValueError("bin widths must be positive")
    if distance is None:
        distance = distance_to_fracture(grid)
    edges = np.concatenate([[0.0], np.cumsum(widths)])
    binned = np.searchsorted(edges, distance, side="right") - 1
    return _from_labels(grid, binned)


def block_partition(grid, nx_blocks, ny_blocks, domain=None):
    """Structured rectangular tiling by cell centers (resolution control)."""
    if nx_blocks < 1 or ny_blocks < 1:
        raise ValueError("need at least one block per direction")
    c = grid.cell_center
    if domain is None:
        if grid.cartesian is not None:
            m = grid.cartesian
            domain = (m.x0, m.y0, m.x0 + m.hx * m.nx, m.y0 + m.hy * m.ny)
        else:
            domain = (c[:, 0].min(), c[:, 1].min(), c[:, 0].max(), c[:, 1].max())
    x0, y0, x1, y1 = domain
    bi = np.clip(((c[:, 0] - x0) / (x1 - x0) * nx_blocks).astype(np.int64), 0, nx_blocks - 1)
    bj = np.clip(((c[:, 1] - y0) / (y1 - y0) * ny_blocks).astype(np.int64), 0, ny_blocks - 1)
    return _from_labels(grid, bj * nx_blocks + bi)


def intersect_partitions(p1, p2):
    """Common refinement: coarse cells are nonempty intersections."""
    if p1.grid is not p2.grid:
        raise GridError("partitions must live on the same grid")
    key = p1.labels.astype(np.int64) * (p2.labels.max() + 1) + p2.labels
    return _from_labels(p1.grid, key)


def split_hybrid(p):
    """Separate fracture from matrix cells, then split into components."""
    frac = p.grid.is_fracture.astype(np.int64)
    key = p.labels * 2 + frac
    return _from_labels(p.grid, key)


def enforce_connected(p):
    """Split every coarse cell into connected components of the fine graph."""
    return _from_labels(p.grid, p.labels)


def merge_small(p, min_size=4):
    """Merge coarse cells below min_size into the best like-kind neighbor.

    The target is the neighbor of the same kind group sharing the most fine
    connections (ties broken by smallest label).  Repeats until stable.
    """
    labels = p.labels.copy()
    grid = p.grid
    frac = grid.is_fracture
    ci, cj = grid.conn_cells[:, 0], grid.conn_cells[:, 1]
    for _ in range(grid.n_cells):
        part = Partition(grid, labels)
        labels = part.labels
        sizes = part.sizes()
        kinds = part.coarse_kinds()
        small = np.nonzero(sizes < min_size)[0]
        if small.size == 0:
            break
        li, lj = labels[ci], labels[cj]
        cross = li != lj
        merged_any = False
        for s in small:
            touching = cross & ((li == s) | (lj == s))
            if not touching.any():
                continue
            others = np.where(li[touching] == s, lj[touching], li[touching])
            cand, counts = np.unique(others, return_counts=True)
            same_kind = kinds[cand] == kinds[s]
            if not same_kind.any():
                continue
            cand, counts = cand[same_kind], counts[same_kind]
            best = cand[np.lexsort((cand, -counts))][0]
            labels[labels == s] = best
            merged_any = True
            break  # recompute sizes/kinds after each merge
        if not merged_any:
            break
    return Partition(grid, labels)


def lift_partition(p, fine_grid):
    """Transfer a partition built on a coarser fine grid to a refined grid.

    Every refined cell adopts the label of the nearest source cell of the
    same kind group, which is exact for structured refinement of built grids.
    """
    src = p.grid
    labels = np.empty(fine_grid.n_cells, dtype=np.int64)
    for mask_src, mask_dst in (
        (~src.is_fracture, ~fine_grid.is_fracture),
        (src.is_fracture, fine_grid.is_fracture),
    ):
        idx = np.nonzero(mask_src)[0]
        tgt = np.nonzero(mask_dst)[0]
        if tgt.size == 0:
            continue
        if idx.size == 0:
            raise GridError("refined grid has cells of a kind the source grid lacks")
        tree = cKDTree(src.cell_center[idx])
        _, nearest = tree.query(fine_grid.cell_center[tgt])
        labels[tgt] = p.labels[idx[nearest]]
    out = _from_labels(fine_grid, labels)
    return out


def partition_stats(p):
    """Summary: counts, coarsening factor and size distribution."""
    sizes = p.sizes()
    kinds = p.coarse_kinds()
    return {
        "fine_cells": int(p.grid.n_cells),
        "coarse_cells": int(p.n_coarse),
        "coarsening_factor": float(p.grid.n_cells) / float(p.n_coarse),
        "matrix_cells": int(np.sum(kinds == "matrix")),
        "fracture_cells": int(np.sum(kinds == "fracture")),
        "size_min": int(sizes.min()),
        "size_median": float(np.median(sizes)),
        "size_max": int(sizes.max()),
    }


@dataclass
class CoarsenParams:
    """Knobs for the full pipeline."""

    use_tof: bool = True
    tof_bins: int = 6
    use_distance: bool = True
    distance_widths: tuple = (25.0, 50.0, 100.0, 200.0)
    blocks: tuple = None  # (nx_blocks, ny_blocks) or None
    min_cell_size: int = 4


def build_partition(grid, flux=None, porosity=1e-3, params=None):
    """Full coarse-grid pipeline: indicators, intersection, purity, components."""
    params = params or CoarsenParams()
    parts = []
    if params.use_tof:
        if flux is None:
            raise GridError("TOF indicator requested but no flux field given")
        tof = compute_tof(grid, flux, porosity)
        parts.append(indicator_partition(grid, tof, params.tof_bins))
    if params.use_distance:
        parts.append(distance_partition(grid, widths=params.distance_widths))
    if params.blocks is not None:
        parts.append(block_partition(grid, *params.blocks))
    if not parts:
        raise GridError("coarsening needs at least one indicator")
    p = parts[0]
    for other in parts[1:]:
        p = intersect_partitions(p, other)
    p = split_hybrid(p)
    p = enforce_connected(p)
    if params.min_cell_size > 1:
        p = merge_small(p, params.min_cell_size)
    p.validate()
    return p
