"""The first-order upwind map X1(w, dt)(x) = x - w(x) dt and its certificates.

``evaluate_composed`` realizes the composed terms ``field o X1`` at quadrature
points: backtrack, locate the containing cell (hinted by the point's own
cell, since upwind points move only O(dt)), and evaluate there.  Upwind
points that leave the domain by at most ``h * 1e-10`` are clamped to the
nearest boundary point; larger excursions abort the time step.
"""

from dataclasses import dataclass

import numpy as np

from .elements import quadrature_rule, shape_eval_many
from .errors import FootOutsideDomain
from .fields import DiscreteField, eval_field, eval_field_grad, gather_cell_coeffs

CLAMP_FACTOR = 1e-10
CFL_LIMIT = 0.25


@dataclass(frozen=True)
class CflCertificate:
    """Record of the time-step condition dt * |w|_{1,inf} <= 1/4.

    ``w_w1inf`` is the maximum over all cells and sample points of the
    Frobenius norm of the velocity Jacobian (exact for P1 fields, whose
    gradients are cellwise constant; sampled at the degree-5 quadrature
    points for P2).
    """

    w_w1inf: float
    dt: float
    product: float
    ok: bool


def velocity_seminorm(w):
    """|w|_{1,inf}: max Frobenius norm of grad(w) over quadrature samples."""
    dm = w.dof_map
    if dm.components != 2:
        raise ValueError("velocity seminorm needs a vector field")
    mesh = dm.mesh
    rule = quadrature_rule(5)
    _, ref_grads = shape_eval_many(dm.degree, rule.points)
    grads = np.einsum("mji,qkj->mqki", mesh.affine_binv, ref_grads)
    local = gather_cell_coeffs(w, slice(None))
    nloc = ref_grads.shape[1]
    jx = np.einsum("mk,mqki->mqi", local[:, :nloc], grads)
    jy = np.einsum("mk,mqki->mqi", local[:, nloc:], grads)
    frob2 = (jx ** 2).sum(axis=2) + (jy ** 2).sum(axis=2)
    return float(np.sqrt(frob2.max(initial=0.0)))


def check_cfl(w, dt):
    """Certificate for the bijectivity/Jacobian bounds of X1(w, dt)."""
    norm = velocity_seminorm(w)
    product = dt * norm
    return CflCertificate(w_w1inf=norm, dt=dt, product=product,
                          ok=product <= CFL_LIMIT)


def _eval_velocity(w, points, cells=None, mesh=None):
    if isinstance(w, DiscreteField):
        msh = w.dof_map.mesh
        if cells is None:
            cells, lams = msh.locate_points(points, np.zeros(len(points), dtype=np.int64))
            if np.any(cells < 0):
                raise ValueError("point outside mesh while evaluating velocity")
        else:
            lams = msh.barycentric_many(cells, points)
        return eval_field(w, cells, lams)
    return np.asarray(w(points[:, 0], points[:, 1]), dtype=float)


def foot(w, dt, x):
    """Upwind point x - w(x) dt for a single point or an (N, 2) array."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    vals = _eval_velocity(w, pts)
    out = pts - dt * vals
    return out[0] if single else out


def jacobian(w, dt, x):
    """det(I - dt grad w) at point(s) x for a discrete velocity field."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    mesh = w.dof_map.mesh
    cells, lams = mesh.locate_points(pts, np.zeros(len(pts), dtype=np.int64))
    if np.any(cells < 0):
        raise ValueError("jacobian requested outside the mesh")
    jac = eval_field_grad(w, cells, lams)
    g = np.eye(2)[None, :, :] - dt * jac
    det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
    return float(det[0]) if single else det


def _nearest_boundary_points(mesh, pts):
    """Closest point on the boundary polyline for each row of ``pts``."""
    segs = mesh.edges[mesh.boundary_edge_flags]
    a = mesh.nodes[segs[:, 0]]
    b = mesh.nodes[segs[:, 1]]
    ab = b - a
    denom = (ab ** 2).sum(axis=1)
    out = np.empty_like(pts)
    dist = np.empty(len(pts))
    for i, p in enumerate(pts):
        t = np.clip(((p - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
        proj = a + t[:, None] * ab
        d2 = ((proj - p) ** 2).sum(axis=1)
        j = int(np.argmin(d2))
        out[i] = proj[j]
        dist[i] = np.sqrt(d2[j])
    return out, dist


def _locate_with_clamp(mesh, feet, hints):
    cells, lams = mesh.locate_points(feet, hints)
    outside = np.nonzero(cells < 0)[0]
    if len(outside):
        near, dist = _nearest_boundary_points(mesh, feet[outside])
        tol = mesh.h * CLAMP_FACTOR
        bad = dist > tol
        if np.any(bad):
            worst = float(dist[bad].max())
            raise FootOutsideDomain(
                f"{int(bad.sum())} upwind point(s) left the domain by up to "
                f"{worst:.3e} (> clamp tolerance {tol:.3e}); "
                "time-step condition violated")
        feet = feet.copy()
        feet[outside] = near
        c2, l2 = mesh.locate_points(near, hints[outside])
        if np.any(c2 < 0):
            raise FootOutsideDomain("clamped upwind point still not located")
        cells[outside] = c2
        lams[outside] = l2
    return cells, lams, feet


def locate_feet(w, dt, cache):
    """Backtrack and locate all quadrature points of ``cache``.

    Returns ``(cells, lams, feet)`` flattened over (cell, point) pairs, for
    reuse across several composed right-hand sides of one time step.
    """
    mesh = cache.mesh
    pts = cache.points.reshape(-1, 2)
    hints = cache.cell_index
    if isinstance(w, DiscreteField):
        wvals = cache.eval_vector(w).reshape(-1, 2)
    else:
        wvals = np.asarray(w(pts[:, 0], pts[:, 1]), dtype=float)
    feet = pts - dt * wvals
    return _locate_with_clamp(mesh, feet, hints)


def eval_located(field, located):
    """Evaluate a field (discrete or analytic) at located upwind points."""
    cells, lams, feet = located
    if isinstance(field, DiscreteField):
        return eval_field(field, cells, lams)
    return np.asarray(field(feet[:, 0], feet[:, 1]), dtype=float)


def evaluate_composed(field, w, dt, cells, points, mesh=None):
    """Values of ``field o X1(w, dt)`` at physical points with hint cells.

    ``cells`` are the cells containing ``points`` (used to evaluate a
    discrete ``w`` exactly and as location hints for the upwind points).
    ``mesh`` is only needed when both ``field`` and ``w`` are analytic.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    cells = np.asarray(cells, dtype=np.int64)
    if isinstance(w, DiscreteField):
        mesh = w.dof_map.mesh
    elif isinstance(field, DiscreteField):
        mesh = field.dof_map.mesh
    elif mesh is None:
        raise ValueError("mesh is required when field and w are both analytic")
    wvals = _eval_velocity(w, points, cells=cells, mesh=mesh)
    feet = points - dt * wvals
    located = _locate_with_clamp(mesh, feet, cells.copy())
    return eval_located(field, located)
