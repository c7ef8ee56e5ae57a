"""Krylov solvers for the two symmetric systems of each time step.

Both solvers are deterministic (fixed iteration order, serial reductions) and
report the independently recomputed true relative residual ``|Ax-b|/|b|``.
The temperature system is SPD (conjugate gradients, Jacobi preconditioner);
the flow system is symmetric indefinite (MINRES with a user-supplied positive
block-diagonal preconditioner).  Consistent singular systems, such as the
stabilized flow block whose kernel is the constant pressure, are handled
naturally because the Krylov iterates stay orthogonal to the kernel.
"""

from dataclasses import dataclass

import numpy as np

from .errors import SolverFailure


@dataclass
class SolveReport:
    iterations: int
    residual: float
    method: str


def _as_operator(A):
    return A.mat if hasattr(A, "mat") else A


def _safe_inv_diag(d):
    d = np.abs(np.asarray(d, dtype=float))
    floor = d.max(initial=0.0) * 1e-300
    d = np.where(d > floor, d, 1.0)
    return 1.0 / d


def solve_spd(A, b, tol=1e-10, precond_diag=None, max_iter=None):
    """Preconditioned conjugate gradients for an SPD system.

    Returns ``(x, SolveReport)``; raises :class:`SolverFailure` after
    ``10 n`` iterations without reaching ``|Ax-b| <= tol |b|``.
    """
    M = _as_operator(A)
    n = M.shape[0]
    b = np.asarray(b, dtype=float)
    normb = float(np.linalg.norm(b))
    if normb == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, "cg")
    dinv = _safe_inv_diag(M.diagonal() if precond_diag is None else precond_diag)
    if max_iter is None:
        max_iter = 10 * n

    x = np.zeros(n)
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    it = 0
    while it < max_iter:
        Ap = M @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise SolverFailure("matrix is not positive definite",
                                SolveReport(it, np.linalg.norm(r) / normb, "cg"))
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if np.linalg.norm(r) <= tol * normb:
            true_r = b - M @ x
            res = float(np.linalg.norm(true_r) / normb)
            if res <= tol:
                return x, SolveReport(it, res, "cg")
            r = true_r  # recursive residual drifted; restart from the true one
            z = dinv * r
            p = z.copy()
            rz = float(r @ z)
            continue
        z = dinv * r
        rz_new = float(r @ z)
        beta = rz_new / rz
        p = z + beta * p
        rz = rz_new
    res = float(np.linalg.norm(b - M @ x) / normb)
    raise SolverFailure(
        f"CG did not converge in {max_iter} iterations (residual {res:.3e})",
        SolveReport(max_iter, res, "cg"))


def solve_sym_indefinite(A, b, tol=1e-10, precond_diag=None, max_iter=None):
    """Preconditioned MINRES for a symmetric (possibly indefinite) system.

    ``precond_diag`` must be a positive diagonal; without one, the absolute
    matrix diagonal is used.  Same return/raise contract as
    :func:`solve_spd`.
    """
    M = _as_operator(A)
    n = M.shape[0]
    b = np.asarray(b, dtype=float)
    normb = float(np.linalg.norm(b))
    if normb == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, "minres")
    dinv = _safe_inv_diag(M.diagonal() if precond_diag is None else precond_diag)
    if max_iter is None:
        max_iter = 10 * n

    x = np.zeros(n)
    r1 = b.copy()
    y = dinv * r1
    beta1 = float(r1 @ y)
    if beta1 <= 0.0:
        raise SolverFailure("preconditioner is not positive definite",
                            SolveReport(0, 1.0, "minres"))
    beta1 = np.sqrt(beta1)

    oldb, beta = 0.0, beta1
    dbar, epsln, phibar = 0.0, 0.0, beta1
    cs, sn = -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    check_at = tol * beta1
    it = 0
    while it < max_iter:
        it += 1
        v = (1.0 / beta) * y
        y = M @ v
        if it >= 2:
            y -= (beta / oldb) * r1
        alfa = float(v @ y)
        y -= (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = dinv * r2
        oldb = beta
        beta2 = float(r2 @ y)
        if beta2 < 0.0:
            raise SolverFailure("preconditioner lost positive definiteness",
                                SolveReport(it, phibar / beta1, "minres"))
        beta = np.sqrt(beta2)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = np.hypot(gbar, beta)
        gamma = max(gamma, np.finfo(float).tiny)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        if phibar <= check_at:
            res = float(np.linalg.norm(b - M @ x) / normb)
            if res <= tol:
                return x, SolveReport(it, res, "minres")
            check_at *= 0.25
    res = float(np.linalg.norm(b - M @ x) / normb)
    raise SolverFailure(
        f"MINRES did not converge in {max_iter} iterations (residual {res:.3e})",
        SolveReport(max_iter, res, "minres"))
