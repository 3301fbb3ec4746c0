"""Discrete fracture-matrix grids: 2D matrix cells plus 1D fracture cells.

Fractures are co-dimension one objects: each fracture cell sits on an edge of
the underlying grid and carries its aperture as a volumetric factor, so a
fracture cell of length L and aperture a has bulk measure L*a.  Crossing
fractures are reduced to direct fracture-fracture connections by eliminating
the intersection unknown (star-delta), so the cell list contains no 0-d cells.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_array
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

# Cell kind tags.  INTERSECTION is accepted on import for foreign grids but is
# never produced by the built-in meshers.
MATRIX = 0
FRACTURE = 1
INTERSECTION = 2

_KIND_TOKEN = {MATRIX: "M", FRACTURE: "F", INTERSECTION: "X"}
_TOKEN_KIND = {v: k for k, v in _KIND_TOKEN.items()}

SNAP_TOL = 1e-9  # fracture segments must sit on grid lines within this (m)


class GridError(Exception):
    """Invalid grid geometry or topology."""


class GridFormatError(GridError):
    """Malformed grid file; carries a line number when available."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass
class CartesianMeta:
    """Structured-grid metadata kept by the built-in meshers (not exported)."""

    x0: float
    y0: float
    hx: float
    hy: float
    nx: int
    ny: int

    def node_id(self, i, j):
        return j * (self.nx + 1) + i


@dataclass
class FractureNetwork:
    """Set of 2D line fractures, each with an aperture.

    segments: (n, 5) array of rows [x1, y1, x2, y2, aperture], meters.
    """

    segments: np.ndarray

    def __post_init__(self):
        self.segments = np.atleast_2d(np.asarray(self.segments, dtype=float))
        if self.segments.size == 0:
            self.segments = np.zeros((0, 5))
        if self.segments.shape[1] != 5:
            raise GridError("fracture segments must have 5 columns (x1 y1 x2 y2 a)")
        if np.any(self.segments[:, 4] <= 0):
            raise GridError("fracture apertures must be positive")

    @property
    def n_segments(self):
        return self.segments.shape[0]

    def validate_inside(self, domain):
        x0, y0, x1, y1 = domain
        pts = self.segments[:, :4].reshape(-1, 2)
        tol = SNAP_TOL
        ok = (
            (pts[:, 0] >= x0 - tol)
            & (pts[:, 0] <= x1 + tol)
            & (pts[:, 1] >= y0 - tol)
            & (pts[:, 1] <= y1 + tol)
        )
        if not ok.all():
            bad = np.nonzero(~ok)[0][0] // 2
            raise GridError(f"fracture segment {bad} has endpoints outside the domain")

    def save(self, path):
        with open(path, "w") as fh:
            for row in self.segments:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path):
        rows = []
        with open(path) as fh:
            for ln, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 5:
                    raise GridFormatError("expected 5 values per fracture row", ln)
                rows.append([float(p) for p in parts])
        return cls(np.array(rows) if rows else np.zeros((0, 5)))


class FineGrid:
    """Immutable fine-scale DFM grid.

    Cells are stored in one flat list (matrix cells first for built grids),
    connections once per unordered pair.  Connection geometry is the data TPFA
    needs: interface measure, the two center-to-interface distances and a unit
    normal oriented from the first to the second cell.  Boundary faces carry no
    explicit distance; assembly uses d = measure / (2 * area), which is exact
    for rectangular matrix cells and for fracture cells meeting the boundary
    head-on.
    """

    def __init__(
        self,
        cell_kind,
        cell_center,
        cell_measure,
        cell_aperture,
        conn_cells,
        conn_area,
        conn_d,
        conn_normal,
        bface_cell,
        bface_area,
        bface_normal,
        bface_tag,
        cell_nodes,
        cartesian=None,
        fracture_segments=None,
        rasterized=False,
        validate=True,
    ):
        self.cell_kind = np.asarray(cell_kind, dtype=np.int8)
        self.cell_center = np.asarray(cell_center, dtype=float).reshape(-1, 2)
        self.cell_measure = np.asarray(cell_measure, dtype=float)
        self.cell_aperture = np.asarray(cell_aperture, dtype=float)
        self.conn_cells = np.asarray(conn_cells, dtype=np.int64).reshape(-1, 2)
        self.conn_area = np.asarray(conn_area, dtype=float)
        self.conn_d = np.asarray(conn_d, dtype=float).reshape(-1, 2)
        self.conn_normal = np.asarray(conn_normal, dtype=float).reshape(-1, 2)
        self.bface_cell = np.asarray(bface_cell, dtype=np.int64)
        self.bface_area = np.asarray(bface_area, dtype=float)
        self.bface_normal = np.asarray(bface_normal, dtype=float).reshape(-1, 2)
        self.bface_tag = list(bface_tag)
        self.cell_nodes = [list(map(int, ns)) for ns in cell_nodes]
        self.cartesian = cartesian
        self.fracture_segments = fracture_segments
        self.rasterized = rasterized
        self._adjacency = None
        self._node_incidence = None
        if validate:
            self.validate()

    # -- basic queries ----------------------------------------------------

    @property
    def n_cells(self):
        return self.cell_kind.shape[0]

    @property
    def n_connections(self):
        return self.conn_cells.shape[0]

    @property
    def n_nodes(self):
        return 1 + max((max(ns) for ns in self.cell_nodes if ns), default=-1)

    @property
    def is_fracture(self):
        """Boolean mask of lower-dimensional cells (fracture or intersection)."""
        return self.cell_kind != MATRIX

    @property
    def fracture_cells(self):
        return np.nonzero(self.is_fracture)[0]

    def adjacency(self):
        """Symmetric cell-connectivity graph as a CSR boolean matrix."""
        if self._adjacency is None:
            n = self.n_cells
            i, j = self.conn_cells[:, 0], self.conn_cells[:, 1]
            ones = np.ones(len(i), dtype=np.int8)
            a = csr_array(
                (np.concatenate([ones, ones]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                shape=(n, n),
            )
            a.data[:] = 1
            self._adjacency = a
        return self._adjacency

    def node_incidence(self):
        """CSR (n_cells x n_nodes) incidence of cells on grid nodes."""
        if self._node_incidence is None:
            rows, cols = [], []
            for c, ns in enumerate(self.cell_nodes):
                rows.extend([c] * len(ns))
                cols.extend(ns)
            data = np.ones(len(rows), dtype=np.int8)
            self._node_incidence = csr_array(
                (data, (rows, cols)), shape=(self.n_cells, self.n_nodes)
            )
        return self._node_incidence

    def boundary_distance(self):
        """Equivalent center-to-face distance per boundary face."""
        return self.cell_measure[self.bface_cell] / (2.0 * self.bface_area)

    # -- validation --------------------------------------------------------

    def validate(self):
        n = self.n_cells
        if n == 0:
            raise GridError("grid has no cells")
        if np.any(self.cell_measure <= 0):
            raise GridError("all cell measures must be positive")
        frac = self.is_fracture
        if np.any(self.cell_aperture[frac] <= 0):
            raise GridError("fracture cells must have positive aperture")
        if self.conn_cells.size:
            if self.conn_cells.min() < 0 or self.conn_cells.max() >= n:
                raise GridError("connection references an invalid cell index")
            if np.any(self.conn_cells[:, 0] == self.conn_cells[:, 1]):
                raise GridError("connection connects a cell to itself")
            key = np.sort(self.conn_cells, axis=1)
            uniq = np.unique(key, axis=0)
            if uniq.shape[0] != key.shape[0]:
                raise GridError("duplicate connection (pairs must be stored once)")
            if np.any(self.conn_area <= 0) or np.any(self.conn_d <= 0):
                raise GridError("connection areas and distances must be positive")
        if self.bface_cell.size and (self.bface_cell.min() < 0 or self.bface_cell.max() >= n):
            raise GridError("boundary face references an invalid cell index")
        if len(self.cell_nodes) != n:
            raise GridError("cell_nodes must list one node set per cell")
        if n > 1:
            ncomp, _ = connected_components(self.adjacency(), directed=False)
            if ncomp != 1:
                raise GridError(f"grid connectivity graph has {ncomp} components, expected 1")

    # -- comparisons -------------------------------------------------------

    def equals(self, other, tol=1e-12):
        """Structural equality: exact on indices, within tol on geometry."""
        if self.n_cells != other.n_cells or self.n_connections != other.n_connections:
            return False
        if not np.array_equal(self.cell_kind, other.cell_kind):
            return False
        if not np.array_equal(self.conn_cells, other.conn_cells):
            return False
        if not np.array_equal(self.bface_cell, other.bface_cell):
            return False
        if self.bface_tag != other.bface_tag:
            return False
        if self.cell_nodes != other.cell_nodes:
            return False
        for a, b in (
            (self.cell_center, other.cell_center),
            (self.cell_measure, other.cell_measure),
            (self.cell_aperture, other.cell_aperture),
            (self.conn_area, other.conn_area),
            (self.conn_d, other.conn_d),
            (self.conn_normal, other.conn_normal),
            (self.bface_area, other.bface_area),
            (self.bface_normal, other.bface_normal),
        ):
            if a.shape != b.shape:
                return False
            if a.size and np.max(np.abs(a - b)) > tol:
                return False
        return True


# ---------------------------------------------------------------------------
# Cartesian DFM builder
# ---------------------------------------------------------------------------


def _snap_index(value, origin, h, tol=SNAP_TOL):
    """Index of the grid line closest to value, or None if off the lines."""
    k = int(round((value - origin) / h))
    if abs(origin + k * h - value) > tol:
        return None
    return k


def _segment_edge_cover(domain, nx, ny, network):
    """Map axis-aligned fracture segments to covered grid edges.

    Returns {('h'|'v', i, j): aperture}.  Horizontal edge (i, j) runs from
    node (i, j) to (i+1, j); vertical edge (i, j) from node (i, j) to (i, j+1).
    """
    x0, y0, x1, y1 = domain
    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny
    cover = {}
    for s, (xa, ya, xb, yb, a) in enumerate(network.segments):
        dx, dy = abs(xb - xa), abs(yb - ya)
        if dy <= SNAP_TOL and dx > SNAP_TOL:
            j = _snap_index(ya, y0, hy)
            if j is None:
                raise GridError(f"segment {s}: not on a horizontal grid line")
            if j <= 0 or j >= ny:
                raise GridError(f"segment {s}: fracture on the domain boundary")
            lo, hi = sorted((xa, xb))
            i_first = int(np.ceil((lo - x0 - SNAP_TOL) / hx))
            i_last = int(np.floor((hi - x0 + SNAP_TOL) / hx)) - 1
            for i in range(max(i_first, 0), min(i_last, nx - 1) + 1):
                key = ("h", i, j)
                cover[key] = max(cover.get(key, 0.0), a)
        elif dx <= SNAP_TOL and dy > SNAP_TOL:
            i = _snap_index(xa, x0, hx)
            if i is None:
                raise GridError(f"segment {s}: not on a vertical grid line")
            if i <= 0 or i >= nx:
                raise GridError(f"segment {s}: fracture on the domain boundary")
            lo, hi = sorted((ya, yb))
            j_first = int(np.ceil((lo - y0 - SNAP_TOL) / hy))
            j_last = int(np.floor((hi - y0 + SNAP_TOL) / hy)) - 1
            for j in range(max(j_first, 0), min(j_last, ny - 1) + 1):
                key = ("v", i, j)
                cover[key] = max(cover.get(key, 0.0), a)
        else:
            raise GridError(f"segment {s}: not axis-aligned")
    return cover


def _rasterize_edge_cover(domain, nx, ny, network):
    """Approximate general segments by a staircase of grid edges.

    Walks each segment node-to-node on the lattice; diagonal moves insert the
    corner node closer to the true line.  Topology (connectivity, crossings)
    is preserved; geometry is perturbed by at most one cell width.
    """
    x0, y0, x1, y1 = domain
    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny

    def node_of(x, y):
        i = min(max(int(round((x - x0) / hx)), 0), nx)
        j = min(max(int(round((y - y0) / hy)), 0), ny)
        return i, j

    def line_dist(i, j, p, q):
        v = q - p
        w = np.array([x0 + i * hx, y0 + j * hy]) - p
        L2 = v @ v
        t = 0.0 if L2 == 0 else np.clip((w @ v) / L2, 0.0, 1.0)
        return float(np.hypot(*(w - t * v)))

    cover = {}
    for xa, ya, xb, yb, a in network.segments:
        p, q = np.array([xa, ya]), np.array([xb, yb])
        n_samples = max(int(np.ceil(np.hypot(xb - xa, yb - ya) / (0.25 * min(hx, hy)))), 1)
        nodes = [node_of(*(p + t * (q - p))) for t in np.linspace(0.0, 1.0, n_samples + 1)]
        path = [nodes[0]]
        for nd in nodes[1:]:
            if nd != path[-1]:
                path.append(nd)
        edges = []
        for (i1, j1), (i2, j2) in zip(path[:-1], path[1:]):
            if abs(i1 - i2) + abs(j1 - j2) == 1:
                edges.append(((i1, j1), (i2, j2)))
            else:
                # diagonal step: route through the corner nearer to the line
                c1, c2 = (i2, j1), (i1, j2)
                corner = c1 if line_dist(*c1, p, q) <= line_dist(*c2, p, q) else c2
                edges.append(((i1, j1), corner))
                edges.append((corner, (i2, j2)))
        for (i1, j1), (i2, j2) in edges:
            if j1 == j2:
                key = ("h", min(i1, i2), j1)
            else:
                key = ("v", i1, min(j1, j2))
            orient, i, j = key
            interior = (orient == "h" and 0 < j < ny) or (orient == "v" and 0 < i < nx)
            if interior:
                cover[key] = max(cover.get(key, 0.0), a)
    return cover


def _build_from_edge_cover(domain, nx, ny, cover, segments, rasterized):
    x0, y0, x1, y1 = domain
    if nx < 1 or ny < 1 or x1 <= x0 or y1 <= y0:
        raise GridError("invalid domain or resolution")
    hx = (x1 - x0) / nx
    hy = (y1 - y0) / ny
    meta = CartesianMeta(x0, y0, hx, hy, nx, ny)
    nid = meta.node_id

    n_matrix = nx * ny
    kinds = [MATRIX] * n_matrix
    centers = [
        (x0 + (i + 0.5) * hx, y0 + (j + 0.5) * hy) for j in range(ny) for i in range(nx)
    ]
    measures = [hx * hy] * n_matrix
    apertures = [0.0] * n_matrix
    nodes = [
        [nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)]
        for j in range(ny)
        for i in range(nx)
    ]

    frac_of_edge = {}
    frac_len = {}
    for key in sorted(cover):
        orient, i, j = key
        a = cover[key]
        cid = len(kinds)
        frac_of_edge[key] = cid
        kinds.append(FRACTURE)
        apertures.append(a)
        if orient == "h":
            centers.append((x0 + (i + 0.5) * hx, y0 + j * hy))
            measures.append(hx * a)
            frac_len[cid] = hx
            nodes.append([nid(i, j), nid(i + 1, j)])
        else:
            centers.append((x0 + i * hx, y0 + (j + 0.5) * hy))
            measures.append(hy * a)
            frac_len[cid] = hy
            nodes.append([nid(i, j), nid(i, j + 1)])

    def mid(i, j):
        return j * nx + i

    c_cells, c_area, c_d, c_norm = [], [], [], []

    def add_conn(ca, cb, area, da, db, normal):
        c_cells.append((ca, cb))
        c_area.append(area)
        c_d.append((da, db))
        c_norm.append(normal)

    # vertical interior faces (between horizontally adjacent matrix cells)
    for j in range(ny):
        for i in range(nx - 1):
            left, right = mid(i, j), mid(i + 1, j)
            key = ("v", i + 1, j)
            if key in frac_of_edge:
                f = frac_of_edge[key]
                a = apertures[f]
                add_conn(left, f, hy, hx / 2.0, a / 2.0, (1.0, 0.0))
                add_conn(f, right, hy, a / 2.0, hx / 2.0, (1.0, 0.0))
            else:
                add_conn(left, right, hy, hx / 2.0, hx / 2.0, (1.0, 0.0))

    # horizontal interior faces
    for j in range(ny - 1):
        for i in range(nx):
            low, high = mid(i, j), mid(i, j + 1)
            key = ("h", i, j + 1)
            if key in frac_of_edge:
                f = frac_of_edge[key]
                a = apertures[f]
                add_conn(low, f, hx, hy / 2.0, a / 2.0, (0.0, 1.0))
                add_conn(f, high, hx, a / 2.0, hy / 2.0, (0.0, 1.0))
            else:
                add_conn(low, high, hx, hy / 2.0, hy / 2.0, (0.0, 1.0))

    # fracture-fracture couplings: star-delta elimination at shared nodes.
    # For branch cells k meeting at a node, with g_k = aperture/(half length)
    # and cubic-law permeability lam_k, the eliminated pair (p, q) gets a
    # record whose half geometries are u = g_p*c, v = g_q*c with
    # c = (g_p lam_p + g_q lam_q) / sum_k g_k lam_k.  This reproduces the
    # star-delta flow transmissibility exactly, and the conduction one exactly
    # whenever branch apertures are equal (two collinear cells reduce to the
    # plain harmonic record).
    node_branches = {}
    for key, cid in frac_of_edge.items():
        orient, i, j = key
        ends = ((i, j), (i + 1, j)) if orient == "h" else ((i, j), (i, j + 1))
        for end in ends:
            node_branches.setdefault(end, []).append(cid)
    for end in sorted(node_branches):
        cells = sorted(node_branches[end])
        if len(cells) < 2:
            continue
        g = np.array([apertures[c] / (frac_len[c] / 2.0) for c in cells])
        lam = np.array([apertures[c] ** 2 / 12.0 for c in cells])
        total = float(g @ lam)
        for ia in range(len(cells)):
            for ib in range(ia + 1, len(cells)):
                ca, cb = cells[ia], cells[ib]
                c = (g[ia] * lam[ia] + g[ib] * lam[ib]) / total
                u, v = g[ia] * c, g[ib] * c
                area = 0.5 * (apertures[ca] + apertures[cb])
                delta = np.array(centers[cb]) - np.array(centers[ca])
                normal = tuple(delta / np.linalg.norm(delta))
                add_conn(ca, cb, area, area / u, area / v, normal)

    # boundary faces: matrix sides, then fracture ends on the boundary
    b_cell, b_area, b_norm, b_tag = [], [], [], []

    def add_bface(cell, area, normal, tag):
        b_cell.append(cell)
        b_area.append(area)
        b_norm.append(normal)
        b_tag.append(tag)

    for j in range(ny):
        add_bface(mid(0, j), hy, (-1.0, 0.0), "left")
    for j in range(ny):
        add_bface(mid(nx - 1, j), hy, (1.0, 0.0), "right")
    for i in range(nx):
        add_bface(mid(i, 0), hx, (0.0, -1.0), "bottom")
    for i in range(nx):
        add_bface(mid(i, ny - 1), hx, (0.0, 1.0), "top")

    for key in sorted(frac_of_edge):
        orient, i, j = key
        cid = frac_of_edge[key]
        a = apertures[cid]
        if orient == "h":
            if i == 0:
                add_bface(cid, a, (-1.0, 0.0), "left")
            if i == nx - 1:
                add_bface(cid, a, (1.0, 0.0), "right")
        else:
            if j == 0:
                add_bface(cid, a, (0.0, -1.0), "bottom")
            if j == ny - 1:
                add_bface(cid, a, (0.0, 1.0), "top")

    return FineGrid(
        cell_kind=kinds,
        cell_center=centers,
        cell_measure=measures,
        cell_aperture=apertures,
        conn_cells=np.array(c_cells, dtype=np.int64).reshape(-1, 2),
        conn_area=c_area,
        conn_d=np.array(c_d, dtype=float).reshape(-1, 2),
        conn_normal=np.array(c_norm, dtype=float).reshape(-1, 2),
        bface_cell=b_cell,
        bface_area=b_area,
        bface_normal=b_norm,
        bface_tag=b_tag,
        cell_nodes=nodes,
        cartesian=meta,
        fracture_segments=segments,
        rasterized=rasterized,
    )


def build_cartesian_dfm(domain, nx, ny, network=None):
    """Build a Cartesian DFM grid with axis-aligned fractures on grid lines.

    Parameters
    ----------
    domain : tuple (x0, y0, x1, y1) in meters.
    nx, ny : number of matrix cells per direction.
    network : FractureNetwork or None.  Every segment must be axis-aligned
        and lie on an interior grid line within 1e-9 m, otherwise GridError
        is raised naming the offending segment.
    """
    if network is None:
        network = FractureNetwork(np.zeros((0, 5)))
    network.validate_inside(domain)
    cover = _segment_edge_cover(domain, nx, ny, network)
    segments = network.segments.copy() if network.n_segments else None
    return _build_from_edge_cover(domain, nx, ny, cover, segments, rasterized=False)


def rasterize_network(domain, nx, ny, network):
    """Build a Cartesian DFM grid from a general network by edge rasterization.

    Segments of arbitrary orientation are snapped to the nearest staircase of
    fine-grid edges.  This preserves network topology but perturbs geometry;
    the resulting grid is flagged with ``rasterized=True``.
    """
    network.validate_inside(domain)
    cover = _rasterize_edge_cover(domain, nx, ny, network)
    if network.n_segments and not cover:
        logger.warning("rasterization produced no fracture cells")
    segments = network.segments.copy() if network.n_segments else None
    return _build_from_edge_cover(domain, nx, ny, cover, segments, rasterized=True)


# ---------------------------------------------------------------------------
# Distance to the fracture network
# ---------------------------------------------------------------------------


def distance_to_fracture(grid):
    """Per-cell Euclidean distance from cell center to the nearest fracture.

    Uses exact point-segment distances when the grid retains its source
    segments, otherwise falls back to nearest fracture-cell centers.  Fracture
    cells get distance zero.
    """
    frac = grid.is_fracture
    if not frac.any():
        raise GridError("distance indicator undefined: grid has no fracture cells")
    dist = np.zeros(grid.n_cells)
    pts = grid.cell_center[~frac]
    if grid.fracture_segments is not None and len(grid.fracture_segments):
        segs = np.asarray(grid.fracture_segments, dtype=float)
        p1 = segs[:, 0:2][None, :, :]
        p2 = segs[:, 2:4][None, :, :]
        v = p2 - p1
        w = pts[:, None, :] - p1
        L2 = np.einsum("abc,abc->ab", v, v)
        t = np.clip(np.einsum("abc,abc->ab", w, v) / np.maximum(L2, 1e-300), 0.0, 1.0)
        closest = p1 + t[:, :, None] * v
        d = np.linalg.norm(pts[:, None, :] - closest, axis=2)
        dist[~frac] = d.min(axis=1)
    else:
        tree = cKDTree(grid.cell_center[frac])
        dist[~frac], _ = tree.query(pts)
    return dist


# ---------------------------------------------------------------------------
# Grid file format (DFMGRID 1)
# ---------------------------------------------------------------------------


def _fmt(x):
    return repr(float(x))


def export_grid(grid, stream):
    """Write the grid in the line-oriented DFMGRID 1 text format."""
    w = stream.write
    w("DFMGRID 1\n")
    w(f"CELLS {grid.n_cells}\n")
    for k in range(grid.n_cells):
        w(
            f"{_KIND_TOKEN[int(grid.cell_kind[k])]} {_fmt(grid.cell_center[k, 0])} "
            f"{_fmt(grid.cell_center[k, 1])} {_fmt(grid.cell_measure[k])} "
            f"{_fmt(grid.cell_aperture[k])}\n"
        )
    w(f"CONNS {grid.n_connections}\n")
    for k in range(grid.n_connections):
        i, j = grid.conn_cells[k]
        w(
            f"{i} {j} {_fmt(grid.conn_area[k])} {_fmt(grid.conn_d[k, 0])} "
            f"{_fmt(grid.conn_d[k, 1])} {_fmt(grid.conn_normal[k, 0])} "
            f"{_fmt(grid.conn_normal[k, 1])}\n"
        )
    w(f"BOUNDARY {len(grid.bface_cell)}\n")
    for k in range(len(grid.bface_cell)):
        w(
            f"{grid.bface_cell[k]} {_fmt(grid.bface_area[k])} "
            f"{_fmt(grid.bface_normal[k, 0])} {_fmt(grid.bface_normal[k, 1])} "
            f"{grid.bface_tag[k]}\n"
        )
    w("NODES\n")
    for ns in grid.cell_nodes:
        w(" ".join(str(n) for n in ns) + "\n")


def import_grid(stream):
    """Parse a DFMGRID 1 stream into a FineGrid, validating all invariants."""
    lines = stream.read().splitlines()
    pos = 0

    def next_line():
        nonlocal pos
        while pos < len(lines):
            raw = lines[pos]
            pos += 1
            s = raw.strip()
            if s:
                return s, pos
        return None, pos

    def expect_section(name):
        s, ln = next_line()
        if s is None:
            raise GridFormatError(f"unexpected end of file, expected {name}", ln)
        parts = s.split()
        if parts[0] != name:
            raise GridFormatError(f"expected section {name}, found {parts[0]!r}", ln)
        if name in ("CELLS", "CONNS", "BOUNDARY"):
            if len(parts) != 2:
                raise GridFormatError(f"{name} header needs a count", ln)
            try:
                return int(parts[1])
            except ValueError:
                raise GridFormatError(f"bad {name} count {parts[1]!r}", ln) from None
        return None

    s, ln = next_line()
    if s is None or s.split() != ["DFMGRID", "1"]:
        raise GridFormatError("missing 'DFMGRID 1' header", ln)

    n_cells = expect_section("CELLS")
    kinds, centers, measures, apertures = [], [], [], []
    for _ in range(n_cells):
        s, ln = next_line()
        if s is None:
            raise GridFormatError("unexpected end of file in CELLS", ln)
        parts = s.split()
        if len(parts) != 5 or parts[0] not in _TOKEN_KIND:
            raise GridFormatError(f"bad cell record {s!r}", ln)
        try:
            vals = [float(p) for p in parts[1:]]
        except ValueError:
            raise GridFormatError(f"bad number in cell record {s!r}", ln) from None
        if vals[2] <= 0:
            raise GridFormatError("cell measure must be positive", ln)
        kinds.append(_TOKEN_KIND[parts[0]])
        centers.append(vals[0:2])
        measures.append(vals[2])
        apertures.append(vals[3])

    n_conns = expect_section("CONNS")
    cc, ca, cd, cn = [], [], [], []
    for _ in range(n_conns):
        s, ln = next_line()
        if s is None:
            raise GridFormatError("unexpected end of file in CONNS", ln)
        parts = s.split()
        if len(parts) != 7:
            raise GridFormatError(f"bad connection record {s!r}", ln)
        try:
            i, j = int(parts[0]), int(parts[1])
            vals = [float(p) for p in parts[2:]]
        except ValueError:
            raise GridFormatError(f"bad number in connection record {s!r}", ln) from None
        if not (0 <= i < n_cells and 0 <= j < n_cells):
            raise GridFormatError(f"connection references cell {max(i, j)} of {n_cells}", ln)
        cc.append((i, j))
        ca.append(vals[0])
        cd.append(vals[1:3])
        cn.append(vals[3:5])

    n_bf = expect_section("BOUNDARY")
    bc, ba, bn, bt = [], [], [], []
    for _ in range(n_bf):
        s, ln = next_line()
        if s is None:
            raise GridFormatError("unexpected end of file in BOUNDARY", ln)
        parts = s.split()
        if len(parts) != 5:
            raise GridFormatError(f"bad boundary record {s!r}", ln)
        try:
            cell = int(parts[0])
            vals = [float(p) for p in parts[1:4]]
        except ValueError:
            raise GridFormatError(f"bad number in boundary record {s!r}", ln) from None
        if not 0 <= cell < n_cells:
            raise GridFormatError(f"boundary face references cell {cell} of {n_cells}", ln)
        bc.append(cell)
        ba.append(vals[0])
        bn.append(vals[1:3])
        bt.append(parts[4])

    expect_section("NODES")
    node_sets = []
    for c in range(n_cells):
        if pos >= len(lines):
            raise GridFormatError("unexpected end of file in NODES", pos)
        raw = lines[pos]
        pos += 1
        try:
            node_sets.append([int(t) for t in raw.split()])
        except ValueError:
            raise GridFormatError(f"bad node id in NODES row for cell {c}", pos) from None

    try:
        return FineGrid(
            cell_kind=kinds,
            cell_center=centers,
            cell_measure=measures,
            cell_aperture=apertures,
            conn_cells=np.array(cc, dtype=np.int64).reshape(-1, 2),
            conn_area=ca,
            conn_d=np.array(cd, dtype=float).reshape(-1, 2),
            conn_normal=np.array(cn, dtype=float).reshape(-1, 2),
            bface_cell=bc,
            bface_area=ba,
            bface_normal=bn,
            bface_tag=bt,
            cell_nodes=node_sets,
        )
    except GridError as err:
        raise GridFormatError(str(err)) from err
