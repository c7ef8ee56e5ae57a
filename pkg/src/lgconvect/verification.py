"""Manufactured solutions, discrete error norms, and convergence studies.

The error quantities follow the discrete-in-time norms of the analysis:
max-in-time of spatial H1/L2 errors for velocity and temperature, the
time-weighted l2 norm of the pressure L2 error (pressure normalized to zero
mean first), and the l2-in-time L2 norms of the backward-difference defects
``(phi^n - phi^{n-1})/dt - d phi/dt (t^n)``.  Spatial integrals use the
degree-5 rule.
"""

import math
from dataclasses import dataclass

import numpy as np

from .assembly import (RHS_QUAD_DEGREE, ProblemData, assemble_mass,
                       pressure_integral_weights, quad_cache, velocity_maps)
from .errors import ConfigError
from .fields import DiscreteField, gather_cell_coeffs
from .mesh import generate_unit_square
from . import scheme as scheme_mod

DT_RULES = ("spatial_h1", "spatial_l2", "temporal")

NORM_NAMES = ("err_u_linf_h1", "err_u_linf_l2", "err_th_linf_h1",
              "err_th_linf_l2", "err_p_l2l2", "err_dtu_l2l2", "err_dtth_l2l2")


@dataclass
class ManufacturedCase:
    """Analytic solution triple with derivatives and matching forcings."""

    name: str
    nu: float
    kappa: float
    u: callable
    grad_u: callable
    u_t: callable
    p: callable
    theta: callable
    grad_theta: callable
    theta_t: callable
    beta: callable
    f_u: callable
    f_theta: callable


def manufactured_case(name, nu=1.0, kappa=1.0, beta_y=1.0, amplitude=0.1):
    """Built-in smooth cases on the unit square.

    ``trig``: divergence-free trigonometric velocity, zero-trace temperature,
    zero-mean pressure, all modulated by cos(t).  Forcings are the strong-form
    residuals derived symbolically.
    """
    if name != "trig":
        raise ConfigError(f"unknown manufactured case {name!r}")
    A = amplitude
    pi = np.pi

    def g(t):
        return math.cos(t)

    def gp(t):
        return -math.sin(t)

    def u(x, y, t):
        s, sy = np.sin(pi * x), np.sin(pi * y)
        return A * g(t) * np.stack(
            [s ** 2 * np.sin(2 * pi * y), -np.sin(2 * pi * x) * sy ** 2],
            axis=-1)

    def u_t(x, y, t):
        s, sy = np.sin(pi * x), np.sin(pi * y)
        return A * gp(t) * np.stack(
            [s ** 2 * np.sin(2 * pi * y), -np.sin(2 * pi * x) * sy ** 2],
            axis=-1)

    def grad_u(x, y, t):
        s, sy = np.sin(pi * x), np.sin(pi * y)
        S, Sy = np.sin(2 * pi * x), np.sin(2 * pi * y)
        C, Cy = np.cos(2 * pi * x), np.cos(2 * pi * y)
        out = np.empty(np.shape(x) + (2, 2))
        out[..., 0, 0] = pi * S * Sy
        out[..., 0, 1] = 2 * pi * s ** 2 * Cy
        out[..., 1, 0] = -2 * pi * C * sy ** 2
        out[..., 1, 1] = -pi * S * Sy
        return A * g(t) * out

    def p(x, y, t):
        return A * g(t) * np.sin(2 * pi * x) * np.sin(2 * pi * y)

    def theta(x, y, t):
        return A * g(t) * np.sin(pi * x) * np.sin(pi * y)

    def theta_t(x, y, t):
        return A * gp(t) * np.sin(pi * x) * np.sin(pi * y)

    def grad_theta(x, y, t):
        return A * g(t) * pi * np.stack(
            [np.cos(pi * x) * np.sin(pi * y), np.sin(pi * x) * np.cos(pi * y)],
            axis=-1)

    def beta(x, y, t):
        return np.stack([np.zeros_like(x), np.full_like(x, beta_y)], axis=-1)

    def f_u(x, y, t):
        s, sy = np.sin(pi * x), np.sin(pi * y)
        S, Sy = np.sin(2 * pi * x), np.sin(2 * pi * y)
        C, Cy = np.cos(2 * pi * x), np.cos(2 * pi * y)
        gt, gpt = g(t), gp(t)
        conv1 = A ** 2 * gt ** 2 * pi * S * s ** 2 * (Sy ** 2 - 2 * sy ** 2 * Cy)
        conv2 = A ** 2 * gt ** 2 * pi * sy ** 2 * Sy * (S ** 2 - 2 * C * s ** 2)
        visc1 = -2 * nu * pi ** 2 * A * gt * Sy * (C - 2 * s ** 2)
        visc2 = -2 * nu * pi ** 2 * A * gt * S * (2 * sy ** 2 - Cy)
        out = np.empty(np.shape(x) + (2,))
        out[..., 0] = (A * gpt * s ** 2 * Sy + conv1 + visc1
                       + 2 * pi * A * gt * C * Sy)
        out[..., 1] = (-A * gpt * S * sy ** 2 + conv2 + visc2
                       + 2 * pi * A * gt * S * Cy
                       - beta_y * A * gt * s * sy)
        return out

    def f_theta(x, y, t):
        # u . grad(theta) vanishes identically for this pair
        s, sy = np.sin(pi * x), np.sin(pi * y)
        return A * s * sy * (gp(t) + 2 * kappa * pi ** 2 * g(t))

    return ManufacturedCase(name="trig", nu=nu, kappa=kappa, u=u,
                            grad_u=grad_u, u_t=u_t, p=p, theta=theta,
                            grad_theta=grad_theta, theta_t=theta_t, beta=beta,
                            f_u=f_u, f_theta=f_theta)


def problem_data(case):
    return ProblemData(nu=case.nu, kappa=case.kappa, beta=case.beta,
                       f_u=case.f_u, f_theta=case.f_theta)


def initial_data(case):
    """(u0, grad_u0, theta0, grad_theta0) callables at t = 0."""
    return (lambda x, y: case.u(x, y, 0.0),
            lambda x, y: case.grad_u(x, y, 0.0),
            lambda x, y: case.theta(x, y, 0.0),
            lambda x, y: case.grad_theta(x, y, 0.0))


@dataclass
class NormReport:
    err_u_linf_h1: float
    err_u_linf_l2: float
    err_th_linf_h1: float
    err_th_linf_l2: float
    err_p_l2l2: float
    err_dtu_l2l2: float
    err_dtth_l2l2: float

    def as_dict(self):
        return {name: getattr(self, name) for name in NORM_NAMES}


def _grad_arrays(cache, field):
    """Physical gradients of a field at all cache points."""
    local = gather_cell_coeffs(field, slice(None))
    nloc = cache.vals.shape[1]
    if field.dof_map.components == 1:
        return np.einsum("mi,mqid->mqd", local, cache.grads)
    out = np.empty(cache.points.shape[:2] + (2, 2))
    out[:, :, 0, :] = np.einsum("mi,mqid->mqd", local[:, :nloc], cache.grads)
    out[:, :, 1, :] = np.einsum("mi,mqid->mqd", local[:, nloc:], cache.grads)
    return out


def field_errors(field, exact, grad_exact, cache):
    """(L2, H1) errors of a discrete field against analytic (x, y) callables."""
    x, y = cache.points[:, :, 0], cache.points[:, :, 1]
    wd = cache.wdet
    if field.dof_map.components == 1:
        d = cache.eval_scalar(field) - np.asarray(exact(x, y))
        l2sq = float(np.einsum("mq,mq,mq->", d, d, wd))
        dg = _grad_arrays(cache, field) - np.asarray(grad_exact(x, y))
        semi = float(np.einsum("mqd,mqd,mq->", dg, dg, wd))
    else:
        d = cache.eval_vector(field) - np.asarray(exact(x, y))
        l2sq = float(np.einsum("mqd,mqd,mq->", d, d, wd))
        dg = _grad_arrays(cache, field) - np.asarray(grad_exact(x, y))
        semi = float(np.einsum("mqab,mqab,mq->", dg, dg, wd))
    return math.sqrt(l2sq), math.sqrt(l2sq + semi)


def pressure_error(field, exact, cache, weights, area):
    """L2 error of the zero-mean-normalized pressure against ``exact(x, y)``."""
    coeffs = field.coeffs - (weights @ field.coeffs) / area
    local = coeffs[field.dof_map.cell_dofs]
    ph = np.einsum("mi,qi->mq", local, cache.vals)
    x, y = cache.points[:, :, 0], cache.points[:, :, 1]
    d = ph - np.asarray(exact(x, y))
    return math.sqrt(float(np.einsum("mq,mq,mq->", d, d, cache.wdet)))


class NormAccumulator:
    """Streaming evaluation of the discrete error norms over a state sequence."""

    def __init__(self, case, mesh, k, dt):
        self.case = case
        self.dt = dt
        self.cache_k = quad_cache(mesh, k, RHS_QUAD_DEGREE)
        self.cache_q = (self.cache_k if k == 1
                        else quad_cache(mesh, 1, RHS_QUAD_DEGREE))
        self.x = self.cache_k.points[:, :, 0]
        self.y = self.cache_k.points[:, :, 1]
        self.xq = self.cache_q.points[:, :, 0]
        self.yq = self.cache_q.points[:, :, 1]
        self.wd = self.cache_k.wdet
        self.wdq = self.cache_q.wdet
        self.area = float(mesh.areas.sum())
        self.pressure_weights = None  # set lazily from the q dof map
        self.max_u_l2 = self.max_u_h1 = 0.0
        self.max_th_l2 = self.max_th_h1 = 0.0
        self.sum_p = self.sum_dtu = self.sum_dtth = 0.0
        self.prev = None
        self.n_states = 0

    def _u_errors(self, state):
        uh = self.cache_k.eval_vector(state.u)
        ue = np.asarray(self.case.u(self.x, self.y, state.t))
        d = uh - ue
        l2sq = float(np.einsum("mqd,mqd,mq->", d, d, self.wd))
        jh = _grad_arrays(self.cache_k, state.u)
        je = np.asarray(self.case.grad_u(self.x, self.y, state.t))
        dj = jh - je
        h1sq = l2sq + float(np.einsum("mqab,mqab,mq->", dj, dj, self.wd))
        return math.sqrt(l2sq), math.sqrt(h1sq)

    def _theta_errors(self, state):
        th = self.cache_k.eval_scalar(state.theta)
        te = np.asarray(self.case.theta(self.x, self.y, state.t))
        d = th - te
        l2sq = float(np.einsum("mq,mq,mq->", d, d, self.wd))
        gh = _grad_arrays(self.cache_k, state.theta)
        ge = np.asarray(self.case.grad_theta(self.x, self.y, state.t))
        dg = gh - ge
        h1sq = l2sq + float(np.einsum("mqd,mqd,mq->", dg, dg, self.wd))
        return math.sqrt(l2sq), math.sqrt(h1sq)

    def _pressure_error_sq(self, state):
        if self.pressure_weights is None:
            self.pressure_weights = pressure_integral_weights(
                state.p.dof_map.mesh, state.p.dof_map)
        coeffs = state.p.coeffs
        coeffs = coeffs - (self.pressure_weights @ coeffs) / self.area
        local = coeffs[state.p.dof_map.cell_dofs]
        ph = np.einsum("mi,qi->mq", local, self.cache_q.vals)
        pe = np.asarray(self.case.p(self.xq, self.yq, state.t))
        d = ph - pe
        return float(np.einsum("mq,mq,mq->", d, d, self.wdq))

    def _dt_error_sq(self, prev, state):
        du = (state.u.coeffs - prev.u.coeffs) / self.dt
        dth = (state.theta.coeffs - prev.theta.coeffs) / self.dt
        ufield = DiscreteField(state.u.dof_map, du)
        tfield = DiscreteField(state.theta.dof_map, dth)
        uh = self.cache_k.eval_vector(ufield)
        ue = np.asarray(self.case.u_t(self.x, self.y, state.t))
        d = uh - ue
        usq = float(np.einsum("mqd,mqd,mq->", d, d, self.wd))
        th = self.cache_k.eval_scalar(tfield)
        te = np.asarray(self.case.theta_t(self.x, self.y, state.t))
        dt_ = th - te
        tsq = float(np.einsum("mq,mq,mq->", dt_, dt_, self.wd))
        return usq, tsq

    def add(self, state):
        ul2, uh1 = self._u_errors(state)
        tl2, th1 = self._theta_errors(state)
        self.max_u_l2 = max(self.max_u_l2, ul2)
        self.max_u_h1 = max(self.max_u_h1, uh1)
        self.max_th_l2 = max(self.max_th_l2, tl2)
        self.max_th_h1 = max(self.max_th_h1, th1)
        if state.n >= 1:
            self.sum_p += self._pressure_error_sq(state)
            usq, tsq = self._dt_error_sq(self.prev, state)
            self.sum_dtu += usq
            self.sum_dtth += tsq
        self.prev = state
        self.n_states += 1

    def report(self):
        return NormReport(
            err_u_linf_h1=self.max_u_h1,
            err_u_linf_l2=self.max_u_l2,
            err_th_linf_h1=self.max_th_h1,
            err_th_linf_l2=self.max_th_l2,
            err_p_l2l2=math.sqrt(self.dt * self.sum_p),
            err_dtu_l2l2=math.sqrt(self.dt * self.sum_dtu),
            err_dtth_l2l2=math.sqrt(self.dt * self.sum_dtth))


def error_norms(states, case, mesh, k, dt):
    """Norms over a complete state sequence (list or iterator)."""
    acc = NormAccumulator(case, mesh, k, dt)
    for state in states:
        acc.add(state)
    return acc.report()


@dataclass
class TableRow:
    level: int
    n: int
    h: float
    dt: float
    norms: NormReport
    max_div_residual: float = 0.0
    matrices_symmetric: bool = True


@dataclass
class ConvergenceTable:
    rows: list
    observed_orders: dict

    def order(self, norm_name):
        """Observed order from the finest refinement pair (None if < 2 rows)."""
        seq = self.observed_orders[norm_name]
        return seq[-1] if seq else None


def observed_orders(rows):
    """Per-norm slopes log2(e_l / e_{l+1}) between consecutive rows."""
    orders = {name: [] for name in NORM_NAMES}
    for prev, cur in zip(rows[:-1], rows[1:]):
        for name in NORM_NAMES:
            e0 = getattr(prev.norms, name)
            e1 = getattr(cur.norms, name)
            if e0 > 0 and e1 > 0:
                orders[name].append(math.log2(e0 / e1))
            else:
                orders[name].append(float("nan"))
    return orders


def temporal_order_probe(case, k, mesh_n, dt_base, n_levels, T, ref_refine=4,
                         solver_tol=1e-10):
    """Isolate the first-order-in-time error component on a fixed mesh.

    The raw errors against the exact solution are floored by the mesh's
    spatial error (already at the initial projection), so the dt-ratio of
    those norms says nothing about the time discretization.  This probe runs
    a same-mesh reference solution with ``dt_base / 2^(n_levels-1) /
    ref_refine`` and measures ``max_n |u_dt(t_n) - u_ref(t_n)|_{L2}`` over
    each coarse run's own time grid, which cancels the common spatial part.

    Returns a dict with the per-level dts, velocity/temperature deviations,
    and their observed orders.
    """
    data = problem_data(case)
    u0, gu0, t0, gt0 = initial_data(case)
    mesh = generate_unit_square(mesh_n)
    dts = [dt_base / 2 ** level for level in range(n_levels)]
    dt_ref = dts[-1] / ref_refine
    stride = [int(round(dt / dt_ref)) for dt in dts]
    if any(abs(s * dt_ref - dt) > 1e-12 * dt for s, dt in zip(stride, dts)):
        raise ConfigError("reference time step does not nest the coarse grids")

    config_ref = scheme_mod.SchemeConfig(k=k, dt=dt_ref, T=T, data=data,
                                         solver_tol=solver_tol)
    ref_u, ref_theta = {}, {}
    for state in scheme_mod.run(config_ref, mesh, u0, gu0, t0, gt0):
        if state.n % stride[-1] == 0:
            ref_u[state.n] = state.u.coeffs.copy()
            ref_theta[state.n] = state.theta.coeffs.copy()
    v_map, _, t_map = velocity_maps(mesh, k)
    Mv = assemble_mass(mesh, v_map)
    Mt = assemble_mass(mesh, t_map)

    def l2(mass, d):
        return math.sqrt(float(d @ mass.matvec(d)))

    dev_u, dev_th = [], []
    for dt, s in zip(dts, stride):
        config = scheme_mod.SchemeConfig(k=k, dt=dt, T=T, data=data,
                                         solver_tol=solver_tol)
        worst_u = worst_th = 0.0
        for state in scheme_mod.run(config, mesh, u0, gu0, t0, gt0):
            ref_n = state.n * s
            if ref_n not in ref_u:
                continue
            worst_u = max(worst_u, l2(Mv, state.u.coeffs - ref_u[ref_n]))
            worst_th = max(worst_th, l2(Mt, state.theta.coeffs
                                        - ref_theta[ref_n]))
        dev_u.append(worst_u)
        dev_th.append(worst_th)
    orders_u = [math.log2(a / b) for a, b in zip(dev_u[:-1], dev_u[1:])]
    orders_th = [math.log2(a / b) for a, b in zip(dev_th[:-1], dev_th[1:])]
    return {"dts": dts, "dev_u": dev_u, "dev_theta": dev_th,
            "orders_u": orders_u, "orders_theta": orders_th}


def study_time_step(dt_rule, dt_const, h, k):
    if dt_rule == "spatial_h1":
        return dt_const * h ** k
    if dt_rule == "spatial_l2":
        return dt_const * h ** (k + 1)
    raise ConfigError(f"unknown dt_rule {dt_rule!r}")


def convergence_study(case, k, mesh_n, n_levels, dt_rule, dt_const, T,
                      c0=1.0, solver_tol=1e-10, cfl_policy="abort",
                      progress=None):
    """Run the scheme over a refinement ladder and tabulate errors and orders.

    ``dt_rule``: ``spatial_h1`` slaves dt to ``dt_const * h^k``,
    ``spatial_l2`` to ``dt_const * h^(k+1)``; ``temporal`` keeps the mesh
    fixed at ``mesh_n`` and halves ``dt_const`` per level.  Every (h, dt)
    pair must satisfy the stability condition ``dt <= c0 sqrt(h)``.
    """
    if dt_rule not in DT_RULES:
        raise ConfigError(f"dt_rule must be one of {DT_RULES}, got {dt_rule!r}")
    if n_levels < 1:
        raise ConfigError("need at least one level")
    data = problem_data(case)
    u0, gu0, t0, gt0 = initial_data(case)
    rows = []
    for level in range(n_levels):
        if dt_rule == "temporal":
            n = mesh_n
            dt = dt_const / 2 ** level
        else:
            n = mesh_n * 2 ** level
            dt = None
        mesh = generate_unit_square(n)
        if dt is None:
            dt = study_time_step(dt_rule, dt_const, mesh.h, k)
        if dt > c0 * math.sqrt(mesh.h):
            raise ConfigError(
                f"level {level}: dt = {dt:.6g} violates the stability "
                f"condition dt <= c0 h^(1/2) = {c0 * math.sqrt(mesh.h):.6g}")
        config = scheme_mod.SchemeConfig(k=k, dt=dt, T=T, data=data,
                                         solver_tol=solver_tol,
                                         cfl_policy=cfl_policy)
        acc = NormAccumulator(case, mesh, k, dt)
        max_div = 0.0
        symmetric = True
        for state in scheme_mod.run(config, mesh, u0, gu0, t0, gt0):
            acc.add(state)
            if state.n >= 1:
                max_div = max(max_div, state.diagnostics["div_residual"])
                symmetric = symmetric and state.diagnostics["matrices_symmetric"]
        rows.append(TableRow(level=level, n=n, h=mesh.h, dt=dt,
                             norms=acc.report(), max_div_residual=max_div,
                             matrices_symmetric=symmetric))
        if progress is not None:
            progress(rows[-1])
    return ConvergenceTable(rows=rows, observed_orders=observed_orders(rows))
