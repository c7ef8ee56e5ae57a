"""Assembly of the bilinear forms and right-hand sides of the scheme.

All matrices are built cellwise into COO triplets and compressed once, so
duplicate entries are merged by a deterministic sorted accumulation.
Dirichlet conditions are eliminated symmetrically (zero row/column, unit
diagonal); right-hand sides carry exact zeros at eliminated dofs because all
boundary conditions are homogeneous.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import characteristics
from .elements import build_dof_map, quadrature_rule, shape_eval_many
from .fields import gather_cell_coeffs

RHS_QUAD_DEGREE = 5  # all right-hand-side / composition / error integrals


@dataclass
class ProblemData:
    """Coefficients and data of the convection problem.

    ``beta``, ``f_u`` and ``f_theta`` are vectorized callables ``(x, y, t)``;
    vector-valued ones return shape ``(..., 2)``.
    """

    nu: float
    kappa: float
    beta: Callable
    f_u: Callable
    f_theta: Callable

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("viscosity nu must be positive")
        if not self.kappa > 0:
            raise ValueError("thermal conductivity kappa must be positive")


class SparseSymMatrix:
    """CSR matrix carrying a symmetry certificate.

    The certificate passes when ``max|A - A^T| <= 1e-12 * max|A|``.
    """

    def __init__(self, mat):
        mat = mat.tocsr()
        if mat.shape[0] != mat.shape[1]:
            raise ValueError("SparseSymMatrix must be square")
        self.mat = mat
        self.n = mat.shape[0]
        self.symmetry_error = self._symmetry_error()
        self.symmetric = self.symmetry_error <= 1e-12

    def _symmetry_error(self):
        diff = self.mat - self.mat.T
        if diff.nnz == 0:
            return 0.0
        scale = np.abs(self.mat.data).max() if self.mat.nnz else 1.0
        return float(np.abs(diff.data).max() / scale)

    def matvec(self, x):
        return self.mat @ x

    def diagonal(self):
        return self.mat.diagonal()

    def toarray(self):
        return self.mat.toarray()


# -- quadrature caches ------------------------------------------------------

class CellQuadCache:
    """Per-(mesh, degree, rule) arrays reused across assembly calls.

    Attributes
    ----------
    vals : (Q, nloc) basis values at the rule points
    grads : (M, Q, nloc, 2) physical basis gradients
    points : (M, Q, 2) physical quadrature points
    wdet : (M, Q) weight * cell area
    """

    def __init__(self, mesh, degree, rule):
        self.mesh = mesh
        self.degree = degree
        self.rule = rule
        vals, ref_grads = shape_eval_many(degree, rule.points)
        self.vals = vals
        # x_q = sum_i lam_i * vertex_i
        verts = mesh.nodes[mesh.cells]  # (M, 3, 2)
        self.points = np.einsum("qi,mid->mqd", rule.points, verts)
        self.grads = np.einsum("mji,qkj->mqki", mesh.affine_binv, ref_grads)
        self.wdet = rule.weights[None, :] * mesh.areas[:, None]
        self.cell_index = np.repeat(np.arange(mesh.n_cells), len(rule.weights))

    def eval_scalar(self, field):
        """Field values at all quadrature points, shape (M, Q)."""
        local = gather_cell_coeffs(field, slice(None))
        return np.einsum("mi,qi->mq", local, self.vals)

    def eval_vector(self, field):
        """Vector field values at all quadrature points, shape (M, Q, 2)."""
        local = gather_cell_coeffs(field, slice(None))
        nloc = self.vals.shape[1]
        out = np.empty(self.points.shape)
        out[:, :, 0] = np.einsum("mi,qi->mq", local[:, :nloc], self.vals)
        out[:, :, 1] = np.einsum("mi,qi->mq", local[:, nloc:], self.vals)
        return out


def quad_cache(mesh, degree, exact_degree):
    return CellQuadCache(mesh, degree, quadrature_rule(exact_degree))


def assembly_quad_degree(k):
    """Quadrature exactness for stiffness/mass/divergence terms."""
    return max(2 * k, 2)


# -- scatter helpers --------------------------------------------------------

def _scatter_square(local, dof_map):
    """Sum (M, nloc, nloc) local blocks into an n x n CSR matrix."""
    cd = dof_map.cell_dofs
    nloc = cd.shape[1]
    rows = np.repeat(cd, nloc, axis=1).ravel()
    cols = np.tile(cd, (1, nloc)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(dof_map.n_dofs, dof_map.n_dofs))
    return mat.tocsr()


def _scatter_rect(local, row_map, col_map):
    """Sum (M, nr, nc) local blocks into an (n_rows x n_cols) CSR matrix."""
    rd, cd = row_map.cell_dofs, col_map.cell_dofs
    nr, nc = rd.shape[1], cd.shape[1]
    rows = np.repeat(rd, nc, axis=1).ravel()
    cols = np.tile(cd, (1, nr)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(row_map.n_dofs, col_map.n_dofs))
    return mat.tocsr()


def _scatter_vector(field_vals, dof_map, cache):
    """Right-hand-side vector from per-point integrand values.

    ``field_vals`` has shape (M, Q) for scalar spaces or (M, Q, 2) for
    vector spaces (one integrand per test component).
    """
    vals = cache.vals
    if dof_map.components == 1:
        local = np.einsum("mq,qi,mq->mi", field_vals, vals, cache.wdet)
    else:
        lx = np.einsum("mq,qi,mq->mi", field_vals[:, :, 0], vals, cache.wdet)
        ly = np.einsum("mq,qi,mq->mi", field_vals[:, :, 1], vals, cache.wdet)
        local = np.hstack([lx, ly])
    out = np.zeros(dof_map.n_dofs)
    np.add.at(out, dof_map.cell_dofs.ravel(), local.ravel())
    return out


def _scatter_grad_vector(vec_vals, dof_map, cache):
    """Right-hand-side vector pairing a given vector field with test gradients.

    Scalar spaces: ``vec_vals`` is (M, Q, 2) and the result is
    ``int vec . grad(psi_i)``.  Vector spaces: ``vec_vals`` is (M, Q, 2, 2)
    with row ``a`` paired against ``grad(phi_i)`` of component ``a``.
    """
    g, wd = cache.grads, cache.wdet
    if dof_map.components == 1:
        local = np.einsum("mqd,mqid,mq->mi", vec_vals, g, wd)
    else:
        lx = np.einsum("mqd,mqid,mq->mi", vec_vals[:, :, 0, :], g, wd)
        ly = np.einsum("mqd,mqid,mq->mi", vec_vals[:, :, 1, :], g, wd)
        local = np.hstack([lx, ly])
    out = np.zeros(dof_map.n_dofs)
    np.add.at(out, dof_map.cell_dofs.ravel(), local.ravel())
    return out


# -- matrices ---------------------------------------------------------------

def assemble_mass(mesh, dof_map, cache=None):
    """Gram matrix of the basis (block diagonal per component for vectors)."""
    if cache is None:
        cache = quad_cache(mesh, dof_map.degree, 2 * dof_map.degree)
    vals, w = cache.vals, cache.rule.weights
    unit = np.einsum("q,qi,qj->ij", w, vals, vals)
    local = mesh.areas[:, None, None] * unit[None, :, :]
    if dof_map.components == 2:
        nloc = vals.shape[1]
        big = np.zeros((mesh.n_cells, 2 * nloc, 2 * nloc))
        big[:, :nloc, :nloc] = local
        big[:, nloc:, nloc:] = local
        local = big
    return SparseSymMatrix(_scatter_square(local, dof_map))


def assemble_temperature_stiffness(mesh, dof_map, kappa=1.0, cache=None):
    """kappa * (grad theta, grad psi) for a scalar space."""
    if cache is None:
        cache = quad_cache(mesh, dof_map.degree, assembly_quad_degree(dof_map.degree))
    local = kappa * np.einsum("mqid,mqjd,mq->mij",
                              cache.grads, cache.grads, cache.wdet)
    return SparseSymMatrix(_scatter_square(local, dof_map))


def assemble_velocity_stiffness(mesh, dof_map, nu=1.0, cache=None):
    """2 nu (D(u), D(v)) for a vector space, D the symmetric gradient."""
    if dof_map.components != 2:
        raise ValueError("velocity stiffness needs a vector dof map")
    if cache is None:
        cache = quad_cache(mesh, dof_map.degree, assembly_quad_degree(dof_map.degree))
    g, wd = cache.grads, cache.wdet
    lap = np.einsum("mqid,mqjd,mq->mij", g, g, wd)
    nloc = g.shape[2]
    local = np.empty((mesh.n_cells, 2 * nloc, 2 * nloc))
    for a in range(2):
        for b in range(2):
            # 2 D(phi_i e_a) : D(phi_j e_b)
            #   = delta_ab grad(phi_i).grad(phi_j) + d_b phi_i * d_a phi_j
            cross = np.einsum("mqi,mqj,mq->mij", g[:, :, :, b], g[:, :, :, a], wd)
            block = nu * (cross + (lap if a == b else 0.0))
            local[:, a * nloc:(a + 1) * nloc, b * nloc:(b + 1) * nloc] = block
    return SparseSymMatrix(_scatter_square(local, dof_map))


def assemble_divergence(mesh, v_map, q_map, cache_v=None, cache_q=None):
    """B with ``B[i, j] = -(div phi_j, chi_i)`` (pressure rows, velocity cols)."""
    if q_map.degree != 1 or q_map.components != 1:
        raise ValueError("pressure space must be scalar P1")
    deg = assembly_quad_degree(v_map.degree)
    if cache_v is None:
        cache_v = quad_cache(mesh, v_map.degree, deg)
    if cache_q is None:
        cache_q = quad_cache(mesh, q_map.degree, deg)
    gv, wd = cache_v.grads, cache_v.wdet
    qv = cache_q.vals
    nloc = gv.shape[2]
    local = np.empty((mesh.n_cells, qv.shape[1], 2 * nloc))
    for a in range(2):
        local[:, :, a * nloc:(a + 1) * nloc] = -np.einsum(
            "qi,mqj,mq->mij", qv, gv[:, :, :, a], wd)
    return _scatter_rect(local, q_map, v_map)


def assemble_pressure_stabilization(mesh, q_map, cache=None):
    """sum_K h_K^2 (grad p, grad q)_K on the P1 pressure space."""
    if q_map.degree != 1 or q_map.components != 1:
        raise ValueError("stabilization needs the scalar P1 pressure space")
    if cache is None:
        cache = quad_cache(mesh, 1, 2)
    local = np.einsum("mqid,mqjd,mq->mij", cache.grads, cache.grads, cache.wdet)
    local = mesh.h_K[:, None, None] ** 2 * local
    return SparseSymMatrix(_scatter_square(local, q_map))


def pressure_integral_weights(mesh, q_map, cache=None):
    """Vector m with ``m_i = int chi_i`` (exact for P1)."""
    if cache is None:
        cache = quad_cache(mesh, q_map.degree, 2)
    ones = np.ones(cache.points.shape[:2])
    return _scatter_vector(ones, q_map, cache)


def eliminate_dirichlet(mat, dirichlet, n):
    """Symmetric elimination: zero rows/columns, unit diagonal."""
    keep = np.ones(n)
    keep[dirichlet] = 0.0
    P = sp.diags(keep)
    fix = sp.diags(1.0 - keep)
    return (P @ mat @ P + fix).tocsr()


@dataclass
class FlowSystem:
    """Assembled block system [[M/dt + A, B^T], [B, -delta0 C]].

    For k=2 a single Lagrange-multiplier row/column enforcing zero pressure
    mean is appended, keeping the matrix symmetric and nonsingular.
    Layout: velocity dofs, then pressure dofs, then the optional multiplier.
    ``precond_diag`` is the positive block-diagonal MINRES preconditioner
    (velocity block diagonal; Schur-complement estimate on the pressure).
    """

    matrix: SparseSymMatrix
    n_v: int
    n_q: int
    has_multiplier: bool
    delta0: int
    precond_diag: np.ndarray
    divergence: object  # eliminated B block, for residual diagnostics
    stabilization: object  # C_h (un-negated), or None for k=2

    @property
    def n(self):
        return self.matrix.n

    def split(self, x):
        return x[:self.n_v], x[self.n_v:self.n_v + self.n_q]

    def pad_rhs(self, rhs_v, rhs_q=None):
        out = np.zeros(self.n)
        out[:self.n_v] = rhs_v
        if rhs_q is not None:
            out[self.n_v:self.n_v + self.n_q] = rhs_q
        return out

    def divergence_residual(self, u, p):
        """max_i |b(u_h, chi_i) - delta0 C_h(p_h, chi_i)|, the (6b) check."""
        r = self.divergence @ u
        if self.delta0:
            r = r - self.stabilization.mat @ p
        return float(np.abs(r).max(initial=0.0))


def build_flow_system(mesh, v_map, q_map, nu, k, dt=None, mass=None,
                      stiffness=None, divergence=None, stabilization=None):
    """Assemble the (steady or time-stepping) flow block system.

    With ``dt`` given, the velocity block is ``M/dt + A``; otherwise ``A``
    alone (the steady operator used by the projection).  ``delta0`` is 0 for
    k=2 and 1 for k=1.
    """
    delta0 = 0 if k == 2 else 1
    if stiffness is None:
        stiffness = assemble_velocity_stiffness(mesh, v_map, nu=nu)
    if divergence is None:
        divergence = assemble_divergence(mesh, v_map, q_map)
    K = stiffness.mat
    if dt is not None:
        if mass is None:
            mass = assemble_mass(mesh, v_map)
        K = mass.mat / dt + K
    K = eliminate_dirichlet(K, v_map.dirichlet_dofs, v_map.n_dofs)
    keep = np.ones(v_map.n_dofs)
    keep[v_map.dirichlet_dofs] = 0.0
    B = (divergence @ sp.diags(keep)).tocsr()

    if delta0 == 1 and stabilization is None:
        stabilization = assemble_pressure_stabilization(mesh, q_map)

    d_v = K.diagonal()
    schur = (B.multiply(B)) @ (1.0 / d_v)
    if delta0 == 1:
        schur = schur + stabilization.mat.diagonal()
    floor = schur.max(initial=0.0)
    schur = np.where(schur > 1e-12 * floor, schur, max(floor, 1.0))

    if delta0 == 1:
        blocks = [[K, B.T], [B, -stabilization.mat]]
        has_mult = False
        pre = np.concatenate([d_v, schur])
    else:
        m = pressure_integral_weights(mesh, q_map)
        mcol = sp.csr_matrix(m[:, None])
        blocks = [[K, B.T, None], [B, None, mcol], [None, mcol.T, None]]
        has_mult = True
        pre = np.concatenate([d_v, schur, [float(m ** 2 @ (1.0 / schur))]])
        stabilization = None
    full = SparseSymMatrix(sp.bmat(blocks, format="csr"))
    return FlowSystem(matrix=full, n_v=v_map.n_dofs, n_q=q_map.n_dofs,
                      has_multiplier=has_mult, delta0=delta0,
                      precond_diag=pre, divergence=B,
                      stabilization=stabilization)


def assemble_flow_system(mesh, v_map, q_map, data, dt, k):
    """Time-stepping flow matrix of the scheme (velocity, pressure) block."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    return build_flow_system(mesh, v_map, q_map, data.nu, k, dt=dt)


# -- right-hand sides -------------------------------------------------------

def assemble_load(mesh, dof_map, func, t, cache):
    """(f(., t), test_i) with the degree-5 rhs rule."""
    x, y = cache.points[:, :, 0], cache.points[:, :, 1]
    vals = np.asarray(func(x, y, t), dtype=float)
    return _scatter_vector(vals, dof_map, cache)


def assemble_buoyancy_rhs(mesh, v_map, theta_prev, beta, t, cache_v,
                          cache_theta):
    """(theta_h^{n-1} beta(., t), v_h) against the velocity tests."""
    theta_vals = cache_theta.eval_scalar(theta_prev)
    x, y = cache_v.points[:, :, 0], cache_v.points[:, :, 1]
    bvals = np.asarray(beta(x, y, t), dtype=float)
    return _scatter_vector(theta_vals[:, :, None] * bvals, v_map, cache_v)


def assemble_transport_rhs(mesh, dof_map, field, w, dt, cache,
                           located=None):
    """(field o X1(w, dt), test_i): the composed upwind term.

    ``located`` may carry precomputed ``(cells, lams)`` of the upwind points
    (shared between the velocity and temperature solves of one step).
    """
    if located is None:
        located = characteristics.locate_feet(w, dt, cache)
    vals = characteristics.eval_located(field, located)
    m, q = cache.points.shape[:2]
    if dof_map.components == 1:
        shaped = vals.reshape(m, q)
    else:
        shaped = vals.reshape(m, q, 2)
    return _scatter_vector(shaped, dof_map, cache)


def velocity_maps(mesh, k):
    """The (velocity, pressure, temperature) dof maps of the element pair."""
    v_map = build_dof_map(mesh, k, components=2)
    q_map = build_dof_map(mesh, 1, components=1, homogeneous_dirichlet=False)
    t_map = build_dof_map(mesh, k, components=1)
    return v_map, q_map, t_map
