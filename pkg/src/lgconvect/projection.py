"""The coupled Stokes-Poisson projection onto the discrete spaces.

The projection solves, for given (w, r, phi), the discrete variational
identity whose left side is the (stabilized) steady flow form plus the
temperature Dirichlet form, and whose right side pairs the analytic fields'
derivatives with the discrete tests.  The flow and temperature parts
decouple: a symmetric indefinite solve and an SPD solve.  For k=1 the
stabilization term acts on the discrete pressure only (the analytic pressure
enters through the unstabilized form).

Used to produce initial data for the time scheme and exposed as the CLI
``project`` diagnostic.
"""

import numpy as np

from .assembly import (RHS_QUAD_DEGREE, _scatter_grad_vector, _scatter_vector,
                       assemble_temperature_stiffness, build_flow_system,
                       eliminate_dirichlet, pressure_integral_weights,
                       quad_cache)
from .fields import DiscreteField
from .linsolve import solve_spd, solve_sym_indefinite


class ProjectionWorkspace:
    """Matrices and caches reused across projections on one mesh."""

    def __init__(self, mesh, v_map, q_map, t_map, data, k):
        self.mesh = mesh
        self.v_map, self.q_map, self.t_map = v_map, q_map, t_map
        self.data = data
        self.k = k
        self.flow = build_flow_system(mesh, v_map, q_map, data.nu, k)
        stiff = assemble_temperature_stiffness(mesh, t_map, kappa=data.kappa)
        self.temp_matrix = eliminate_dirichlet(
            stiff.mat, t_map.dirichlet_dofs, t_map.n_dofs)
        self.cache_v = quad_cache(mesh, v_map.degree, RHS_QUAD_DEGREE)
        self.cache_q = quad_cache(mesh, 1, RHS_QUAD_DEGREE)
        self.cache_t = self.cache_v if t_map.degree == v_map.degree else \
            quad_cache(mesh, t_map.degree, RHS_QUAD_DEGREE)
        self.pressure_weights = pressure_integral_weights(mesh, q_map)
        self.domain_area = float(mesh.areas.sum())


def normalize_pressure(p_coeffs, weights, area):
    """Shift to zero mean: the pressure space is L^2_0."""
    return p_coeffs - (weights @ p_coeffs) / area


def stokes_poisson_project(ws, w, grad_w, r, phi, grad_phi, tol=1e-10):
    """Project analytic (w, r, phi) onto V_h x Q_h x Psi_h.

    ``w`` must have zero trace, ``r`` zero mean, ``phi`` zero trace.  All
    arguments are vectorized callables of (x, y); gradients return
    ``(..., 2, 2)`` / ``(..., 2)``.

    Returns ``(u_h, p_h, theta_h, reports)``.
    """
    x, y = ws.cache_v.points[:, :, 0], ws.cache_v.points[:, :, 1]

    jac = np.asarray(grad_w(x, y), dtype=float)
    dsym = 0.5 * (jac + np.swapaxes(jac, -1, -2))
    rhs_v = _scatter_grad_vector(2.0 * ws.data.nu * dsym, ws.v_map, ws.cache_v)
    # -(div v_h, r): pair r against the velocity test divergence
    rvals = np.asarray(r(x, y), dtype=float)
    eye = np.eye(2)[None, None, :, :]
    rhs_v -= _scatter_grad_vector(rvals[:, :, None, None] * eye,
                                  ws.v_map, ws.cache_v)
    rhs_v[ws.v_map.dirichlet_dofs] = 0.0

    xq, yq = ws.cache_q.points[:, :, 0], ws.cache_q.points[:, :, 1]
    jac_q = np.asarray(grad_w(xq, yq), dtype=float)
    div_w = jac_q[..., 0, 0] + jac_q[..., 1, 1]
    rhs_q = -_scatter_vector(div_w, ws.q_map, ws.cache_q)

    b = ws.flow.pad_rhs(rhs_v, rhs_q)
    xsol, flow_report = solve_sym_indefinite(
        ws.flow.matrix, b, tol=tol, precond_diag=ws.flow.precond_diag)
    u_c, p_c = ws.flow.split(xsol)
    p_c = normalize_pressure(p_c, ws.pressure_weights, ws.domain_area)

    xt, yt = ws.cache_t.points[:, :, 0], ws.cache_t.points[:, :, 1]
    gphi = np.asarray(grad_phi(xt, yt), dtype=float)
    rhs_t = ws.data.kappa * _scatter_grad_vector(gphi, ws.t_map, ws.cache_t)
    rhs_t[ws.t_map.dirichlet_dofs] = 0.0
    t_c, temp_report = solve_spd(ws.temp_matrix, rhs_t, tol=tol)

    reports = {"flow": flow_report, "temperature": temp_report}
    return (DiscreteField(ws.v_map, u_c), DiscreteField(ws.q_map, p_c),
            DiscreteField(ws.t_map, t_c), reports)
