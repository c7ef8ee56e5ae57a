"""Reference-element machinery: P1/P2 Lagrange bases, triangle quadrature, dof maps.

Conventions (fixed so that assembled matrices and CSV output are
bit-reproducible):

* barycentric coordinates ``(l0, l1, l2)`` with reference coordinates
  ``(xi, eta) = (l1, l2)``;
* P2 local dofs: vertices 0..2, then midpoint of the edge opposite vertex j
  at local index ``3 + j``;
* global scalar dofs: mesh nodes in mesh order, then (for P2) edge midpoints
  in the mesh's sorted (min, max) edge order;
* vector dofs are blocked by component: component ``c`` occupies
  ``[c * n_scalar, (c+1) * n_scalar)``.
"""

from dataclasses import dataclass, field

import numpy as np

VALID_DEGREES = (1, 2)

# Symmetric positive Gauss rules on the triangle, weights normalized to sum 1.
# Orbit parameters were derived by solving the moment equations at 30-digit
# precision and are exact to the printed digits.
_D4_A1 = 0.44594849091596489
_D4_A2 = 0.091576213509770743
_D4_W1 = 0.22338158967801147
_D4_W2 = 0.10995174365532187
_D5_A = 0.10128650732345634
_D5_B = 0.47014206410511509
_D5_WA = 0.12593918054482715
_D5_WB = 0.13239415278850618
_D6_A1 = 0.24928674517091042
_D6_A2 = 0.063089014491502228
_D6_W1 = 0.11678627572637937
_D6_W2 = 0.050844906370206817
_D6_A3 = 0.053145049844816947
_D6_B3 = 0.31035245103378441
_D6_W3 = 0.082851075618373575


def _orbit3(a):
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _orbit6(a, b):
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature on the reference triangle in barycentric coordinates.

    Weights sum to 1; use sites multiply by the physical cell area.
    ``exact_degree`` is the highest total polynomial degree integrated exactly.
    """

    points: np.ndarray
    weights: np.ndarray
    exact_degree: int


def _make_rule(points, weights, degree):
    return QuadratureRule(np.array(points, dtype=float),
                          np.array(weights, dtype=float), degree)


_RULES = {
    1: _make_rule([(1 / 3, 1 / 3, 1 / 3)], [1.0], 1),
    2: _make_rule(_orbit3(1 / 6), [1 / 3] * 3, 2),
    4: _make_rule(_orbit3(_D4_A1) + _orbit3(_D4_A2),
                  [_D4_W1] * 3 + [_D4_W2] * 3, 4),
    5: _make_rule([(1 / 3, 1 / 3, 1 / 3)] + _orbit3(_D5_A) + _orbit3(_D5_B),
                  [9 / 40] + [_D5_WA] * 3 + [_D5_WB] * 3, 5),
    6: _make_rule(_orbit3(_D6_A1) + _orbit3(_D6_A2) + _orbit6(_D6_A3, _D6_B3),
                  [_D6_W1] * 3 + [_D6_W2] * 3 + [_D6_W3] * 6, 6),
}


def quadrature_rule(exact_degree):
    """Positive-weight symmetric rule exact to at least ``exact_degree``."""
    if not 1 <= exact_degree <= 6:
        raise ValueError(f"unsupported quadrature degree {exact_degree}")
    key = {1: 1, 2: 2, 3: 4, 4: 4, 5: 5, 6: 6}[exact_degree]
    return _RULES[key]


def n_local_dofs(degree):
    return {1: 3, 2: 6}[degree]


def shape_eval(degree, lam):
    """Lagrange basis values and reference gradients at one barycentric point.

    Returns ``(values, grads)`` with ``grads[i] = (d/dxi, d/deta)`` of basis
    function ``i``.
    """
    vals, grads = shape_eval_many(degree, np.asarray(lam, dtype=float)[None, :])
    return vals[0], grads[0]


def shape_eval_many(degree, lams):
    """Vectorized :func:`shape_eval` over an array of barycentric points."""
    if degree not in VALID_DEGREES:
        raise ValueError(f"element degree must be 1 or 2, got {degree}")
    lams = np.asarray(lams, dtype=float)
    q = len(lams)
    # Gradients of (l0, l1, l2) w.r.t. reference coordinates (xi, eta).
    dlam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    if degree == 1:
        vals = lams.copy()
        grads = np.broadcast_to(dlam, (q, 3, 2)).copy()
        return vals, grads
    vals = np.empty((q, 6))
    grads = np.empty((q, 6, 2))
    for i in range(3):
        li = lams[:, i]
        vals[:, i] = li * (2.0 * li - 1.0)
        grads[:, i] = (4.0 * li - 1.0)[:, None] * dlam[i]
    for j in range(3):
        j1, j2 = (j + 1) % 3, (j + 2) % 3
        vals[:, 3 + j] = 4.0 * lams[:, j1] * lams[:, j2]
        grads[:, 3 + j] = 4.0 * (lams[:, j2, None] * dlam[j1]
                                 + lams[:, j1, None] * dlam[j2])
    return vals, grads


@dataclass(frozen=True)
class DofMap:
    """Global degree-of-freedom map for a scalar or vector Lagrange space.

    ``cell_dofs[c]`` lists the global dofs of cell ``c`` matching the local
    basis ordering (all components of a vector space, blocked by component).
    ``dirichlet_dofs`` are the dofs whose support point lies on the boundary
    when the space carries a homogeneous Dirichlet condition.
    """

    mesh: object
    degree: int
    components: int
    n_scalar: int
    n_dofs: int
    cell_dofs: np.ndarray
    dirichlet_dofs: np.ndarray
    free_dofs: np.ndarray = field(repr=False)

    @property
    def n_local(self):
        return n_local_dofs(self.degree) * self.components


def build_dof_map(mesh, degree, components=1, homogeneous_dirichlet=True):
    """Construct the deterministic dof numbering for ``P_degree`` on ``mesh``."""
    if degree not in VALID_DEGREES:
        raise ValueError(f"element degree must be 1 or 2, got {degree}")
    if components not in (1, 2):
        raise ValueError("components must be 1 or 2")

    if degree == 1:
        n_scalar = mesh.n_nodes
        scalar_cell = mesh.cells
        dirichlet_scalar = np.nonzero(mesh.boundary_node_flags)[0]
    else:
        n_scalar = mesh.n_nodes + mesh.n_edges
        scalar_cell = np.hstack([mesh.cells, mesh.n_nodes + mesh.cell_edges])
        dirichlet_scalar = np.concatenate([
            np.nonzero(mesh.boundary_node_flags)[0],
            mesh.n_nodes + np.nonzero(mesh.boundary_edge_flags)[0],
        ])

    if not homogeneous_dirichlet:
        dirichlet_scalar = np.empty(0, dtype=np.int64)

    if components == 1:
        cell_dofs = scalar_cell
        dirichlet = np.sort(dirichlet_scalar)
    else:
        cell_dofs = np.hstack([scalar_cell, scalar_cell + n_scalar])
        dirichlet = np.sort(np.concatenate(
            [dirichlet_scalar, dirichlet_scalar + n_scalar]))

    n_dofs = components * n_scalar
    free = np.setdiff1d(np.arange(n_dofs), dirichlet, assume_unique=False)
    return DofMap(mesh=mesh, degree=degree, components=components,
                  n_scalar=n_scalar, n_dofs=n_dofs,
                  cell_dofs=np.ascontiguousarray(cell_dofs),
                  dirichlet_dofs=dirichlet, free_dofs=free)


def dof_points(dof_map):
    """Support points of the scalar dofs (nodes, then edge midpoints for P2)."""
    mesh = dof_map.mesh
    if dof_map.degree == 1:
        return mesh.nodes.copy()
    mids = 0.5 * (mesh.nodes[mesh.edges[:, 0]] + mesh.nodes[mesh.edges[:, 1]])
    return np.vstack([mesh.nodes, mids])
