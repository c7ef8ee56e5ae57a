"""Discrete fields: coefficient vectors bound to a dof map, plus evaluation."""

from dataclasses import dataclass

import numpy as np

from .elements import dof_points, shape_eval_many


@dataclass
class DiscreteField:
    """Finite element function: coefficients over a :class:`DofMap`.

    Vector fields store coefficients blocked by component.
    """

    dof_map: object
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.dof_map.n_dofs,):
            raise ValueError(
                f"coefficient vector has length {self.coeffs.shape}, "
                f"expected ({self.dof_map.n_dofs},)")

    def copy(self):
        return DiscreteField(self.dof_map, self.coeffs.copy())


def zero_field(dof_map):
    return DiscreteField(dof_map, np.zeros(dof_map.n_dofs))


def interpolate(dof_map, func, t=None):
    """Nodal interpolation of an analytic function onto the space.

    ``func(x, y[, t])`` must be vectorized; vector-valued functions return
    shape ``(..., 2)``.  Values at Dirichlet dofs are kept as sampled (the
    caller is responsible for supplying zero-trace data when required).
    """
    pts = dof_points(dof_map)
    vals = func(pts[:, 0], pts[:, 1]) if t is None else func(pts[:, 0], pts[:, 1], t)
    vals = np.asarray(vals, dtype=float)
    if dof_map.components == 1:
        return DiscreteField(dof_map, vals)
    return DiscreteField(dof_map, np.concatenate([vals[:, 0], vals[:, 1]]))


def gather_cell_coeffs(field, cells):
    """Per-cell local coefficient matrix ``(len(cells), n_local)``."""
    return field.coeffs[field.dof_map.cell_dofs[cells]]


def eval_field(field, cells, lams):
    """Evaluate the field at barycentric points in given cells.

    Returns shape ``(N,)`` for scalar spaces and ``(N, 2)`` for vector spaces.
    """
    dm = field.dof_map
    vals, _ = shape_eval_many(dm.degree, lams)
    local = gather_cell_coeffs(field, cells)
    nloc = vals.shape[1]
    if dm.components == 1:
        return np.einsum("ni,ni->n", local, vals)
    out = np.empty((len(cells), 2))
    out[:, 0] = np.einsum("ni,ni->n", local[:, :nloc], vals)
    out[:, 1] = np.einsum("ni,ni->n", local[:, nloc:], vals)
    return out


def eval_field_grad(field, cells, lams):
    """Physical gradient at barycentric points in given cells.

    Returns ``(N, 2)`` for scalar spaces; for vector spaces returns the
    Jacobian ``(N, 2, 2)`` with ``J[n, i, j] = d w_i / d x_j``.
    """
    dm = field.dof_map
    mesh = dm.mesh
    _, ref_grads = shape_eval_many(dm.degree, lams)
    # d/dx f = B^{-T} d/dxi f
    binv = mesh.affine_binv[cells]  # (N, 2, 2)
    grads = np.einsum("nji,nkj->nki", binv, ref_grads)  # (N, nloc, 2)
    local = gather_cell_coeffs(field, cells)
    nloc = grads.shape[1]
    if dm.components == 1:
        return np.einsum("nk,nki->ni", local, grads)
    jac = np.empty((len(cells), 2, 2))
    jac[:, 0, :] = np.einsum("nk,nki->ni", local[:, :nloc], grads)
    jac[:, 1, :] = np.einsum("nk,nki->ni", local[:, nloc:], grads)
    return jac


def eval_at_points(field, points, hints=None):
    """Evaluate the field at physical points (locating each point first)."""
    mesh = field.dof_map.mesh
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if hints is None:
        hints = np.zeros(len(points), dtype=np.int64)
    cells, lams = mesh.locate_points(points, hints)
    if np.any(cells < 0):
        bad = points[cells < 0][0]
        raise ValueError(f"point {tuple(bad)} lies outside the mesh")
    return eval_field(field, cells, lams)


def as_callable(field):
    """Wrap a DiscreteField as ``f(x, y)`` for use where analytic data is expected."""
    def f(x, y):
        pts = np.column_stack([np.ravel(x), np.ravel(y)])
        vals = eval_at_points(field, pts)
        if field.dof_map.components == 1:
            return vals.reshape(np.shape(x))
        return vals.reshape(np.shape(x) + (2,))
    return f
