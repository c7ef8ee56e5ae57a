"""Triangulations of polygonal domains: construction, refinement, point location.

Meshes are immutable after construction; all derived data (neighbors, edge
table, affine maps, diameters) is computed once in ``Mesh.__init__`` so that
queries are pure and safe for concurrent reads.
"""

import numpy as np

from .errors import MeshFormatError

# A point is "inside" a cell when all barycentric coordinates exceed -BARY_TOL.
BARY_TOL = 1e-12


class Mesh:
    """Conforming triangulation with counterclockwise cells.

    Parameters
    ----------
    nodes : (N, 2) float array
        Vertex coordinates.
    cells : (M, 3) int array
        Vertex indices per triangle, counterclockwise.

    Attributes
    ----------
    nodes, cells : arrays as above
    boundary_node_flags : (N,) bool
        True for nodes lying on the topological boundary.
    cell_neighbors : (M, 3) int
        ``cell_neighbors[c, j]`` is the cell sharing the edge opposite local
        vertex ``j`` of cell ``c``, or -1 on the boundary.
    h_K : (M,) float
        Cell diameters (longest edge).
    h : float
        ``max(h_K)``.
    alpha0 : float
        Realized shape-regularity constant ``max(h / h_K)``.
    edges : (E, 2) int
        Unique edges as (min, max) vertex pairs, sorted lexicographically.
    cell_edges : (M, 3) int
        Global edge index opposite each local vertex.
    boundary_edge_flags : (E,) bool
        True for edges contained in exactly one cell.
    """

    def __init__(self, nodes, cells):
        nodes = np.ascontiguousarray(nodes, dtype=float)
        cells = np.ascontiguousarray(cells, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshFormatError("nodes must be an (N, 2) array")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise MeshFormatError("cells must be an (M, 3) array")
        if not np.all(np.isfinite(nodes)):
            raise MeshFormatError("node coordinates must be finite")
        if cells.min(initial=0) < 0 or cells.max(initial=-1) >= len(nodes):
            raise MeshFormatError("cell vertex index out of range")

        self.nodes = nodes
        self.cells = cells
        self.n_nodes = len(nodes)
        self.n_cells = len(cells)

        a = nodes[cells[:, 0]]
        b = nodes[cells[:, 1]]
        c = nodes[cells[:, 2]]
        signed = 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                        - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
        if np.any(signed <= 0.0):
            bad = int(np.argmin(signed))
            raise MeshFormatError(
                f"cell {bad} has non-positive signed area {signed[bad]:g}; "
                "cells must be counterclockwise")
        self.areas = signed

        lab = np.linalg.norm(b - a, axis=1)
        lbc = np.linalg.norm(c - b, axis=1)
        lca = np.linalg.norm(a - c, axis=1)
        self.h_K = np.maximum(np.maximum(lab, lbc), lca)
        self.h = float(self.h_K.max())
        self.alpha0 = float(self.h / self.h_K.min())

        # Affine map x = a0 + B*(xi, eta); cache B^{-1} for barycentric solves.
        B = np.empty((self.n_cells, 2, 2))
        B[:, :, 0] = b - a
        B[:, :, 1] = c - a
        det = 2.0 * signed
        Binv = np.empty_like(B)
        Binv[:, 0, 0] = B[:, 1, 1] / det
        Binv[:, 0, 1] = -B[:, 0, 1] / det
        Binv[:, 1, 0] = -B[:, 1, 0] / det
        Binv[:, 1, 1] = B[:, 0, 0] / det
        self.affine_b = B
        self.affine_binv = Binv
        self.affine_origin = a

        self._build_edges()

    def _build_edges(self):
        cells = self.cells
        # Edge j is opposite local vertex j.
        raw = np.stack([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]],
                       axis=1).reshape(-1, 2)
        raw_sorted = np.sort(raw, axis=1)
        edges, inverse, counts = np.unique(
            raw_sorted, axis=0, return_inverse=True, return_counts=True)
        if counts.max(initial=1) > 2:
            raise MeshFormatError("an edge is shared by more than two cells")
        self.edges = edges
        self.n_edges = len(edges)
        self.cell_edges = inverse.reshape(self.n_cells, 3)
        self.boundary_edge_flags = counts == 1

        # Neighbor across each local edge (-1 on the boundary).
        owner = np.full((self.n_edges, 2), -1, dtype=np.int64)
        flat = self.cell_edges.ravel()
        cell_of = np.repeat(np.arange(self.n_cells), 3)
        first = np.full(self.n_edges, -1, dtype=np.int64)
        order = np.argsort(flat, kind="stable")
        sorted_edges = flat[order]
        sorted_cells = cell_of[order]
        starts = np.searchsorted(sorted_edges, np.arange(self.n_edges))
        first = sorted_cells[starts]
        owner[:, 0] = first
        second_mask = counts == 2
        owner[second_mask, 1] = sorted_cells[starts[second_mask] + 1]

        neigh = np.where(owner[self.cell_edges, 0]
                         == np.arange(self.n_cells)[:, None],
                         owner[self.cell_edges, 1],
                         owner[self.cell_edges, 0])
        self.cell_neighbors = neigh

        self.boundary_node_flags = np.zeros(self.n_nodes, dtype=bool)
        self.boundary_node_flags[edges[self.boundary_edge_flags].ravel()] = True

    # -- queries -----------------------------------------------------------

    def barycentric(self, cell, point):
        """Barycentric coordinates of ``point`` in ``cell`` (may be outside)."""
        d = np.asarray(point, dtype=float) - self.affine_origin[cell]
        lam12 = self.affine_binv[cell] @ d
        return np.array([1.0 - lam12[0] - lam12[1], lam12[0], lam12[1]])

    def barycentric_many(self, cells, points):
        """Vectorized ``barycentric`` for arrays of cells and points."""
        d = points - self.affine_origin[cells]
        lam12 = np.einsum("nij,nj->ni", self.affine_binv[cells], d)
        lam0 = 1.0 - lam12[:, 0] - lam12[:, 1]
        return np.column_stack([lam0, lam12])

    def point_from_barycentric(self, cell, lam):
        """Physical coordinates of barycentric coordinates in ``cell``."""
        v = self.nodes[self.cells[cell]]
        return np.asarray(lam) @ v

    def locate_points(self, points, hints, max_steps=None):
        """Locate an array of points by neighbor walking with exhaustive fallback.

        Parameters
        ----------
        points : (N, 2) float array
        hints : (N,) int array
            Starting cells for the walk.

        Returns
        -------
        cells : (N,) int
            Containing cell per point, -1 where the point is outside.
        lams : (N, 3) float
            Barycentric coordinates in the returned cell (unspecified for
            outside points).
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        cur = np.array(hints, dtype=np.int64).copy()
        out_cells = np.full(n, -1, dtype=np.int64)
        out_lams = np.zeros((n, 3))
        active = np.arange(n)
        if max_steps is None:
            max_steps = self.n_cells + 4

        for _ in range(max_steps):
            if len(active) == 0:
                break
            lams = self.barycentric_many(cur[active], points[active])
            local_min = np.argmin(lams, axis=1)
            inside = lams[np.arange(len(active)), local_min] >= -BARY_TOL
            done = active[inside]
            out_cells[done] = cur[done]
            out_lams[done] = lams[inside]
            active = active[~inside]
            if len(active) == 0:
                break
            step_to = self.cell_neighbors[cur[active], local_min[~inside]]
            hit_boundary = step_to < 0
            # Walks that leave the mesh fall through to exhaustive search.
            stuck = active[hit_boundary]
            if len(stuck):
                self._locate_exhaustive(points, stuck, out_cells, out_lams)
            active = active[~hit_boundary]
            cur[active] = step_to[~hit_boundary]
        if len(active):
            # Cycle suspected: deterministic exhaustive fallback.
            self._locate_exhaustive(points, active, out_cells, out_lams)
        return out_cells, out_lams

    def _locate_exhaustive(self, points, idx, out_cells, out_lams):
        origins = self.affine_origin
        binv = self.affine_binv
        for i in idx:
            d = points[i] - origins
            lam12 = np.einsum("cij,cj->ci", binv, d)
            lam0 = 1.0 - lam12[:, 0] - lam12[:, 1]
            ok = ((lam0 >= -BARY_TOL) & (lam12[:, 0] >= -BARY_TOL)
                  & (lam12[:, 1] >= -BARY_TOL))
            hits = np.nonzero(ok)[0]
            if len(hits):
                c = hits[0]  # ties on edges: first containing cell wins
                out_cells[i] = c
                out_lams[i] = (lam0[c], lam12[c, 0], lam12[c, 1])
            else:
                out_cells[i] = -1


def locate_point(mesh, point, hint=0):
    """Find the cell containing ``point`` starting the walk at ``hint``.

    Returns ``(cell_index, barycentric_coords)`` or ``None`` when the point
    lies outside the closure of the domain.  Points within ``BARY_TOL`` of an
    edge may be reported in either adjacent cell.
    """
    if not 0 <= hint < mesh.n_cells:
        raise ValueError(f"hint {hint} is not a valid cell index")
    cells, lams = mesh.locate_points(np.asarray(point, dtype=float)[None, :],
                                     np.array([hint]))
    if cells[0] < 0:
        return None
    return int(cells[0]), lams[0]


def generate_unit_square(n):
    """Structured criss-cross triangulation of the unit square.

    ``n`` x ``n`` squares, each split along the (lower-left, upper-right)
    diagonal: ``2 n^2`` cells, ``(n+1)^2`` nodes, ``h = sqrt(2)/n``.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    coords = np.arange(n + 1) / n
    xx, yy = np.meshgrid(coords, coords, indexing="xy")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper
    return Mesh(nodes, cells)


def refine_uniform(mesh):
    """Red refinement: every triangle split into 4 congruent children."""
    mids = 0.5 * (mesh.nodes[mesh.edges[:, 0]] + mesh.nodes[mesh.edges[:, 1]])
    nodes = np.vstack([mesh.nodes, mids])
    m = mesh.n_nodes + mesh.cell_edges  # midpoint node of edge opposite vertex j
    v = mesh.cells
    children = np.empty((4 * mesh.n_cells, 3), dtype=np.int64)
    children[0::4] = np.column_stack([v[:, 0], m[:, 2], m[:, 1]])
    children[1::4] = np.column_stack([v[:, 1], m[:, 0], m[:, 2]])
    children[2::4] = np.column_stack([v[:, 2], m[:, 1], m[:, 0]])
    children[3::4] = m
    return Mesh(nodes, children)


def write_mesh(mesh, path):
    """Write the plain-text format: ``nv nc``, node lines, cell lines."""
    lines = [f"{mesh.n_nodes} {mesh.n_cells}"]
    for (x, y), flag in zip(mesh.nodes, mesh.boundary_node_flags):
        lines.append(f"{x:.17g} {y:.17g} {int(flag)}")
    for c in mesh.cells:
        lines.append(f"{c[0]} {c[1]} {c[2]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    """Read the plain-text mesh format written by :func:`write_mesh`."""
    with open(path) as fh:
        tokens = fh.read().split()
    try:
        nv, nc = int(tokens[0]), int(tokens[1])
        vals = tokens[2:]
        if len(vals) != 3 * nv + 3 * nc:
            raise ValueError("wrong token count")
        node_part = np.array(vals[:3 * nv], dtype=float).reshape(nv, 3)
        cell_part = np.array(vals[3 * nv:], dtype=np.int64).reshape(nc, 3)
    except (ValueError, IndexError) as exc:
        raise MeshFormatError(f"cannot parse mesh file {path}: {exc}") from exc
    mesh = Mesh(node_part[:, :2], cell_part)
    file_flags = node_part[:, 2] != 0.0
    if not np.array_equal(file_flags, mesh.boundary_node_flags):
        raise MeshFormatError(
            f"boundary flags in {path} disagree with mesh topology")
    return mesh
