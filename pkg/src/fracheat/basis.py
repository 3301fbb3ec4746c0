"""Restriction and prolongation operators for the coarse conduction term.

The prolongation starts from the piecewise-constant injection P = R^T and is
improved by damped Jacobi sweeps on the unscaled symmetric conduction matrix,
with support truncation to per-coarse-cell interaction regions, clamping of
transient negatives, and cell-wise rescaling back to a partition of unity.
Each basis stops when its discrete energy P_i^T A P_i would increase; the
stop freezes the affected fine cells so late oscillations cannot creep in.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_array, diags_array

from .mesh import GridError

logger = logging.getLogger(__name__)


def restriction_matrix(partition):
    """Finite-volume restriction: R[i, j] = 1 iff fine cell j is in coarse i."""
    labels = partition.labels
    n_c, n_f = partition.n_coarse, len(labels)
    return csr_array(
        (np.ones(n_f), (labels, np.arange(n_f))), shape=(n_c, n_f)
    )


def _allowed_neighbor_pairs(partition, grid):
    """Coarse pairs sharing a fine-grid node, minus matrix pairs that touch
    only at fracture nodes: heat moves along fractures by advection, so
    conduction bases must not bridge them."""
    inc = grid.node_incidence()  # n_cells x n_nodes
    r = restriction_matrix(partition)
    coarse_nodes = csr_array((r @ inc) > 0).astype(np.int8)  # n_c x n_nodes

    frac_rows = inc[grid.fracture_cells, :]
    frac_node_mask = np.zeros(grid.n_nodes, dtype=bool)
    if frac_rows.shape[0]:
        frac_node_mask[np.unique(frac_rows.indices)] = True

    adj_all = csr_array((coarse_nodes @ coarse_nodes.T) > 0)
    keep_nodes = diags_array((~frac_node_mask).astype(np.int8))
    clean_nodes = csr_array(coarse_nodes @ keep_nodes)
    adj_clean = csr_array((clean_nodes @ clean_nodes.T) > 0)

    is_matrix = partition.coarse_kinds() == "matrix"
    clean = set(zip(*adj_clean.nonzero()))
    pairs = []
    coo = adj_all.tocoo()
    for a, b in zip(coo.row, coo.col):
        if a == b:
            continue
        if is_matrix[a] and is_matrix[b] and (int(a), int(b)) not in clean:
            continue  # matrix pair separated by a fracture
        pairs.append((int(a), int(b)))
    return pairs


def _center_depths(partition, grid):
    """Hop distance of every fine cell from its coarse cell's central cell.

    The central cell is the member closest to the volume-weighted centroid;
    distances are walked inside the coarse cell only.
    """
    adj = grid.adjacency().tocsr()
    indptr, indices = adj.indptr, adj.indices
    labels = partition.labels
    depth = np.full(grid.n_cells, -1, dtype=np.int64)
    for k in range(partition.n_coarse):
        cells = np.nonzero(labels == k)[0]
        w = grid.cell_measure[cells]
        centroid = (grid.cell_center[cells] * w[:, None]).sum(axis=0) / w.sum()
        center = cells[np.argmin(np.linalg.norm(grid.cell_center[cells] - centroid, axis=1))]
        depth[center] = 0
        frontier = [int(center)]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for c in frontier:
                for nb in indices[indptr[c]:indptr[c + 1]]:
                    if labels[nb] == k and depth[nb] < 0:
                        depth[nb] = d
                        nxt.append(int(nb))
            frontier = nxt
    return depth


def interaction_regions(partition, grid=None, reach_slack=0):
    """Per-coarse-cell fine support masks as a boolean CSR (n_c x n_f).

    The region of coarse cell i is its own fine cells plus the near half of
    node-sharing neighbors: a neighbor cell j joins region(i) when its hop
    depth into its own coarse cell from the i side does not exceed its hop
    distance from that cell's center (plus reach_slack), and never the
    central cell itself.  Reaching only partway into the neighbors keeps
    every basis pinned to one at its own center, which the rescaling then
    preserves.

    Fracture handling reflects advection-dominated transport in the
    fractures: matrix bases never cover fracture cells (fracture rows stay
    piecewise constant, so the fine-scale wall couplings enter the coarse
    operator through the fracture columns), while fracture bases do spread
    partway into the neighboring matrix so that matrix profiles can decay
    toward the fracture on the coarse length scale.  Matrix neighbors whose
    every shared node also touches a fracture are excluded entirely.
    """
    grid = grid if grid is not None else partition.grid
    labels = partition.labels
    adj = grid.adjacency().tocsr()
    indptr, indices = adj.indptr, adj.indices
    center_depth = _center_depths(partition, grid)
    pairs = _allowed_neighbor_pairs(partition, grid)
    kinds = partition.coarse_kinds()

    # group neighbours k by region owner i; matrix bases stay out of fractures
    by_owner: dict = {}
    for i, k in pairs:
        if kinds[i] == "matrix" and kinds[k] != "matrix":
            continue
        by_owner.setdefault(i, []).append(k)

    n_c, n_f = partition.n_coarse, grid.n_cells
    rows = [np.nonzero(labels == i)[0] for i in range(n_c)]  # own cells
    reg_rows, reg_cols = [], []
    for i in range(n_c):
        reg_rows.extend([i] * len(rows[i]))
        reg_cols.extend(rows[i].tolist())
    own_mask = np.zeros(n_f, dtype=bool)

    for i, neighbors in sorted(by_owner.items()):
        own_mask[:] = False
        own_mask[rows[i]] = True
        wanted = set(neighbors)
        # BFS into each neighbor from the cells adjacent to coarse cell i
        depth = {}
        frontier = []
        for c in rows[i]:
            for nb in indices[indptr[c]:indptr[c + 1]]:
                if labels[nb] in wanted and nb not in depth:
                    depth[int(nb)] = 1
                    frontier.append(int(nb))
        d = 1
        while frontier:
            d += 1
            nxt = []
            for c in frontier:
                for nb in indices[indptr[c]:indptr[c + 1]]:
                    nb = int(nb)
                    if labels[nb] == labels[c] and nb not in depth:
                        depth[nb] = d
                        nxt.append(nb)
            frontier = nxt
        for j, dj in depth.items():
            if center_depth[j] > 0 and dj <= center_depth[j] + reach_slack:
                reg_rows.append(i)
                reg_cols.append(j)

    regions = csr_array(
        (np.ones(len(reg_rows), dtype=bool), (reg_rows, reg_cols)), shape=(n_c, n_f)
    )
    regions.sum_duplicates()
    return csr_array(regions > 0)


@dataclass
class SmoothingControls:
    """Parameters of the basis smoothing iteration."""

    omega: float = 2.0 / 3.0
    max_iterations: int = 100
    residual_tol: float = 5e-3
    energy_termination: bool = True
    clamp_negative: bool = True
    freeze_scope: str = "all"  # 'all': freeze whole rows; 'owner': only the column
    checkpoint_limit: int = 16
    pou_tol: float = 1e-12

    def __post_init__(self):
        if not 0 < self.omega <= 1:
            raise ValueError("relaxation parameter must lie in (0, 1]")
        if self.freeze_scope not in ("all", "owner"):
            raise ValueError("freeze_scope must be 'all' or 'owner'")


@dataclass
class BasisSet:
    """Prolongation/restriction pair with smoothing diagnostics."""

    prolongation: csr_array
    restriction: csr_array
    regions: csr_array = None
    frozen_cells: np.ndarray = None
    energies: list = field(default_factory=list)  # per-basis accepted history
    iterations_used: np.ndarray = None
    mode: str = "constant"
    checkpoints: deque = None  # recent (iteration, P) snapshots for rollback
    pou_deviation: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)

    @property
    def n_coarse(self):
        return self.prolongation.shape[1]

    def export_triplets(self, stream):
        """Write (fine cell, coarse cell, weight) rows for visualization."""
        coo = self.prolongation.tocoo()
        order = np.lexsort((coo.col, coo.row))
        for k in order:
            stream.write(f"{coo.row[k]} {coo.col[k]} {repr(float(coo.data[k]))}\n")


def constant_basis(partition):
    """Piecewise-constant prolongation P = R^T (zero smoothing iterations)."""
    r = restriction_matrix(partition)
    p = csr_array(r.T)
    return BasisSet(
        prolongation=p,
        restriction=r,
        frozen_cells=np.zeros(r.shape[1], dtype=bool),
        energies=[],
        iterations_used=np.zeros(r.shape[0], dtype=np.int64),
        mode="constant",
        checkpoints=deque([(0, p.copy())], maxlen=1),
    )


def basis_energy(a, p):
    """Discrete energy per basis column: E_i = P_i^T A P_i."""
    q = a @ p
    if hasattr(p, "multiply"):
        return np.asarray(p.multiply(q).sum(axis=0)).ravel()
    return np.einsum("ij,ij->j", p, q)


def check_diagonal_positivity(a_c):
    """Gershgorin safeguard: rows with nonpositive diagonal and any coupling.

    Returns (ok, offending_rows).  Rows that are identically zero (isolated
    coarse cells with no conduction at all) pass trivially.
    """
    diag = a_c.diagonal()
    row_nnz = np.diff(a_c.tocsr().indptr)
    bad = (diag < 0) | ((diag <= 0) & (row_nnz > 0) & (abs(a_c).sum(axis=1) > 0))
    bad = np.asarray(bad).ravel()
    return not bad.any(), np.nonzero(bad)[0]


def _rescale_rows(p, rows_mask, owner, frozen_part=None):
    """Cell-wise rescaling to a partition of unity on the selected rows.

    frozen_part holds per-row mass that must not be rescaled (terminated
    columns in 'owner' freeze mode); active entries scale to 1 minus that
    mass.  Rows whose active mass vanished assign the deficit to the owner
    coarse cell's basis.
    """
    p = p.tocsr()
    rowsum = np.asarray(p.sum(axis=1)).ravel()
    fsum = np.zeros_like(rowsum) if frozen_part is None else frozen_part
    asum = rowsum - fsum

    scale = np.ones_like(rowsum)
    target = 1.0 - fsum
    sel = rows_mask & (asum > 1e-300) & (target > 0)
    scale[sel] = target[sel] / asum[sel]
    # rows dominated by frozen mass: keep active at zero, normalize later
    kill = rows_mask & (target <= 0)
    scale[kill] = 0.0
    p = csr_array(diags_array(scale) @ p)

    deficit_rows = np.nonzero(rows_mask & (asum <= 1e-300) & (target > 0))[0]
    if deficit_rows.size:
        add = csr_array(
            (target[deficit_rows], (deficit_rows, owner[deficit_rows])), shape=p.shape
        )
        p = csr_array(p + add)
    return p


def _apply_frozen(p_new, p_old, frozen_rows):
    """Restore frozen rows of p_new from p_old."""
    keep = (~frozen_rows).astype(float)
    hold = frozen_rows.astype(float)
    return csr_array(diags_array(keep) @ p_new + diags_array(hold) @ p_old)


def smooth_basis(a_cond, partition, regions=None, controls=None):
    """Jacobi-smoothed prolongation basis on the conduction operator.

    Starting from P = R^T, all non-terminated bases are updated together:
    P <- P - omega D^-1 A P, truncated to their interaction regions, clamped
    nonnegative (optional), and rescaled row-wise to a partition of unity.
    A basis whose energy would increase rejects that update and terminates;
    termination freezes every fine cell in its interaction region (scope
    'all') or just its own column (scope 'owner').  Global stop on iteration
    count or when the residual |A P| drops below residual_tol relative to the
    initial one.  Coarse cells holding a single fine cell are already exact
    and are never smoothed.
    """
    controls = controls or SmoothingControls()
    r = restriction_matrix(partition)
    if regions is None:
        regions = interaction_regions(partition)
    region_t = csr_array(regions.T).astype(float)
    n_c, n_f = r.shape

    own = np.asarray(regions.astype(float).multiply(r).sum(axis=1)).ravel()
    if np.any(own < partition.sizes()):
        raise GridError("interaction regions must cover their own coarse cells")

    diag = a_cond.diagonal()
    if np.any(diag <= 0):
        raise GridError("conduction operator must have positive diagonal")
    dinv = diags_array(controls.omega / diag)

    owner = partition.labels
    p = csr_array(r.T.astype(float))
    sizes = partition.sizes()
    active = sizes > 1  # singleton coarse cells stay piecewise constant
    terminated = np.zeros(n_c, dtype=bool)
    frozen_rows = np.zeros(n_f, dtype=bool)
    energies = [[float(e)] for e in basis_energy(a_cond, p)]
    iterations_used = np.zeros(n_c, dtype=np.int64)
    checkpoints = deque(maxlen=max(controls.checkpoint_limit, 1))
    checkpoints.append((0, p.copy()))
    pou_dev = []
    res_hist = []

    res0 = _residual(a_cond, p)
    res_hist.append(res0)

    for it in range(1, controls.max_iterations + 1):
        if not (active & ~terminated).any():
            break
        upd_cols = (active & ~terminated).astype(float)
        q = csr_array(a_cond @ p)
        upd = csr_array(dinv @ q) @ diags_array(upd_cols)
        if controls.freeze_scope == "all" and frozen_rows.any():
            upd = csr_array(diags_array((~frozen_rows).astype(float)) @ upd)
        cand = csr_array(p - upd)
        cand = csr_array(cand.multiply(region_t))
        if controls.clamp_negative:
            cand.data[cand.data < 0] = 0.0
            cand.eliminate_zeros()

        cand = _finalize_iteration(
            cand, p, frozen_rows, owner, terminated, controls
        )

        if controls.energy_termination:
            cand, newly = _energy_cascade(
                a_cond, cand, p, energies, active, terminated, regions,
                frozen_rows, owner, controls,
            )
            for i in np.nonzero(newly)[0]:
                iterations_used[i] = it - 1
            terminated |= newly
            if controls.freeze_scope == "all" and newly.any():
                rows = np.unique(
                    csr_array(regions[np.nonzero(newly)[0], :]).indices
                )
                frozen_rows[rows] = True

        p = cand
        e_now = basis_energy(a_cond, p)
        for i in range(n_c):
            if not terminated[i] and active[i]:
                energies[i].append(float(e_now[i]))

        dev = float(np.abs(np.asarray(p.sum(axis=1)).ravel() - 1.0).max())
        pou_dev.append(dev)
        if dev > controls.pou_tol:
            raise GridError(f"partition of unity violated at iteration {it}: {dev:.3e}")

        checkpoints.append((it, p.copy()))
        res = _residual(a_cond, p)
        res_hist.append(res)
        if res <= controls.residual_tol * res0:
            logger.info("basis smoothing converged after %d iterations", it)
            break

    iterations_used[~terminated & active] = len(res_hist) - 1
    return BasisSet(
        prolongation=p,
        restriction=r,
        regions=regions,
        frozen_cells=frozen_rows,
        energies=energies,
        iterations_used=iterations_used,
        mode="smoothed",
        checkpoints=checkpoints,
        pou_deviation=pou_dev,
        residual_history=res_hist,
    )


def _residual(a, p):
    q = a @ p
    q = abs(q)
    return float(np.asarray(q.sum(axis=1)).max()) if q.nnz else 0.0


def _finalize_iteration(cand, p_prev, frozen_rows, owner, terminated, controls):
    """Apply frozen-cell semantics and restore the partition of unity."""
    if controls.freeze_scope == "all":
        rows_mask = ~frozen_rows
        cand = _rescale_rows(cand, rows_mask, owner)
        if frozen_rows.any():
            cand = _apply_frozen(cand, p_prev, frozen_rows)
    else:
        fsum = _frozen_row_mass(cand, terminated)
        cand = _rescale_owner_mode(cand, terminated, owner, fsum)
    return cand


def _frozen_row_mass(p, terminated):
    if not terminated.any():
        return None
    sel = diags_array(terminated.astype(float))
    return np.asarray(csr_array(p @ sel).sum(axis=1)).ravel()


def _rescale_owner_mode(p, terminated, owner, fsum):
    """Owner-scope rescale: active entries absorb 1 - frozen mass per row."""
    n_f = p.shape[0]
    if fsum is None:
        return _rescale_rows(p, np.ones(n_f, dtype=bool), owner)
    over = fsum >= 1.0
    p = p.tocsr()
    if over.any():
        # normalize frozen entries and zero the active ones on those rows
        scale_frozen = np.where(over, 1.0 / np.maximum(fsum, 1e-300), 1.0)
        keep_active = np.where(over, 0.0, 1.0)
        dt = diags_array(terminated.astype(float))
        da = diags_array((~terminated).astype(float))
        p = csr_array(
            diags_array(scale_frozen) @ (p @ dt) + diags_array(keep_active) @ (p @ da)
        )
        fsum = np.where(over, 1.0, fsum)
    # scale only active columns
    rowsum = np.asarray(p.sum(axis=1)).ravel()
    asum = rowsum - fsum
    target = 1.0 - fsum
    scale = np.ones(n_f)
    sel = asum > 1e-300
    scale[sel] = target[sel] / asum[sel]
    da = diags_array((~terminated).astype(float))
    dt = diags_array(terminated.astype(float))
    p = csr_array(diags_array(scale) @ (p @ da) + p @ dt)
    deficit = np.nonzero(~sel & (target > 1e-300))[0]
    if deficit.size:
        add = csr_array((target[deficit], (deficit, owner[deficit])), shape=p.shape)
        p = csr_array(p + add)
    return p


def _energy_cascade(a, cand, p_prev, energies, active, terminated, regions,
                    frozen_rows, owner, controls):
    """Reject energy-increasing updates, re-freezing until self-consistent.

    Reverting a basis can perturb still-active overlapping bases, so the
    check repeats on the reverted state until no accepted basis shows an
    energy increase (bounded cascade; each pass only adds terminations).
    """
    newly = np.zeros(len(active), dtype=bool)
    frozen_now = frozen_rows.copy()
    for _ in range(10):
        e_cand = basis_energy(a, cand)
        prev = np.array([h[-1] for h in energies])
        rising = active & ~terminated & ~newly & (e_cand > prev * (1 + 1e-13) + 1e-300)
        if not rising.any():
            return cand, newly
        newly |= rising
        if controls.freeze_scope == "all":
            rows = np.unique(csr_array(regions[np.nonzero(rising)[0], :]).indices)
            frozen_now[rows] = True
            cand = _apply_frozen(cand, p_prev, frozen_now)
            cand = _rescale_rows(cand, ~frozen_now, owner)
            cand = _apply_frozen(cand, p_prev, frozen_now)
        else:
            # owner scope: revert the rejected columns, re-balance the rest
            dt_rej = diags_array((terminated | newly).astype(float))
            da = diags_array((~(terminated | newly)).astype(float))
            cand = csr_array(cand @ da + p_prev @ dt_rej)
            fsum = _frozen_row_mass(cand, terminated | newly)
            cand = _rescale_owner_mode(cand, terminated | newly, owner, fsum)
    logger.warning("energy cascade did not settle in 10 passes; accepting state")
    return cand, newly
