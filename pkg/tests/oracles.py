"""Independent dense oracles used by the test suite.

Everything here is deliberately written against different machinery than the
package: explicit basis formulas in reference coordinates, a conical-product
(Duffy) quadrature built from Gauss-Jacobi nodes, and dense per-cell blocks.
"""

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


def duffy_rule(m=8):
    """Conical product rule on the reference triangle, exact to degree 2m-1.

    Returns (points (m*m, 2), weights) with weights summing to 1/2.
    """
    xu, wu = roots_legendre(m)
    xv, wv = roots_jacobi(m, 1.0, 0.0)
    u = 0.5 * (xu + 1.0)
    v = 0.5 * (xv + 1.0)
    wu = 0.5 * wu
    wv = 0.25 * wv  # jacobian of the [-1,1] -> [0,1] map on weight (1-x)
    pts = []
    ws = []
    for ui, wui in zip(u, wu):
        for vi, wvi in zip(v, wv):
            pts.append((ui * (1.0 - vi), vi))
            ws.append(wui * wvi)
    return np.array(pts), np.array(ws)


def basis_ref(degree, x, y):
    """Basis values and reference gradients from the closed-form expressions."""
    l0, l1, l2 = 1.0 - x - y, x, y
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    lam = [l0, l1, l2]
    if degree == 1:
        return np.array(lam), dl.copy()
    vals = np.empty(6)
    grads = np.empty((6, 2))
    for i in range(3):
        vals[i] = lam[i] * (2 * lam[i] - 1)
        grads[i] = (4 * lam[i] - 1) * dl[i]
    for j in range(3):
        j1, j2 = (j + 1) % 3, (j + 2) % 3
        vals[3 + j] = 4 * lam[j1] * lam[j2]
        grads[3 + j] = 4 * (lam[j2] * dl[j1] + lam[j1] * dl[j2])
    return vals, grads


class CellOracle:
    """Dense per-cell integration on one triangle."""

    def __init__(self, mesh, cell, degree, m=8):
        verts = mesh.nodes[mesh.cells[cell]]
        self.B = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
        self.a0 = verts[0]
        self.detB = np.linalg.det(self.B)
        self.binv_t = np.linalg.inv(self.B).T
        self.degree = degree
        self.ref_pts, self.ref_w = duffy_rule(m)

    def quad_points(self):
        return self.a0 + self.ref_pts @ self.B.T

    def integrate(self, f):
        """Integral over the cell of f(x, y) (f scalar, called pointwise)."""
        total = 0.0
        for (xr, yr), w in zip(self.ref_pts, self.ref_w):
            x, y = self.a0 + self.B @ np.array([xr, yr])
            total += w * f(x, y)
        return total * self.detB

    def basis_at(self, xr, yr):
        vals, ref_grads = basis_ref(self.degree, xr, yr)
        return vals, ref_grads @ self.binv_t.T

    def mass_block(self):
        n = 3 if self.degree == 1 else 6
        out = np.zeros((n, n))
        for (xr, yr), w in zip(self.ref_pts, self.ref_w):
            vals, _ = self.basis_at(xr, yr)
            out += w * np.outer(vals, vals)
        return out * self.detB

    def stiffness_block(self, coef=1.0):
        n = 3 if self.degree == 1 else 6
        out = np.zeros((n, n))
        for (xr, yr), w in zip(self.ref_pts, self.ref_w):
            _, grads = self.basis_at(xr, yr)
            out += w * grads @ grads.T
        return coef * out * self.detB

    def velocity_stiffness_block(self, nu):
        """2 nu (D(phi_i e_a), D(phi_j e_b)) as a 2n x 2n block."""
        n = 3 if self.degree == 1 else 6
        out = np.zeros((2 * n, 2 * n))
        for (xr, yr), w in zip(self.ref_pts, self.ref_w):
            _, grads = self.basis_at(xr, yr)
            for a in range(2):
                for b in range(2):
                    for i in range(n):
                        for j in range(n):
                            dsym = np.outer(_unit(a), grads[i])
                            dsym = 0.5 * (dsym + dsym.T)
                            esym = np.outer(_unit(b), grads[j])
                            esym = 0.5 * (esym + esym.T)
                            out[a * n + i, b * n + j] += (
                                2.0 * nu * w * np.tensordot(dsym, esym))
        return out * self.detB

    def divergence_block(self):
        """-(div phi_j e_a, chi_i): (3, 2n) block, pressure rows."""
        n = 3 if self.degree == 1 else 6
        out = np.zeros((3, 2 * n))
        for (xr, yr), w in zip(self.ref_pts, self.ref_w):
            pvals, _ = basis_ref(1, xr, yr)
            _, grads = self.basis_at(xr, yr)
            for a in range(2):
                for i in range(3):
                    for j in range(n):
                        out[i, a * n + j] -= w * grads[j, a] * pvals[i]
        return out * self.detB


def _unit(a):
    e = np.zeros(2)
    e[a] = 1.0
    return e


def oracle_global(mesh, dof_map, block_fn, shape=None):
    """Scatter dense per-cell blocks into a dense global matrix."""
    n = dof_map.n_dofs if shape is None else shape[0]
    cols = dof_map.n_dofs if shape is None else shape[1]
    out = np.zeros((n, cols))
    for c in range(mesh.n_cells):
        block, rows_idx, cols_idx = block_fn(c)
        out[np.ix_(rows_idx, cols_idx)] += block
    return out
