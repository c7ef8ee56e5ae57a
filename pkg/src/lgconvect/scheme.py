"""First-order time stepping: alternating symmetric flow and temperature solves.

Each step backtracks the previous fields along the discrete characteristics,
solves the symmetric (velocity, pressure) block system, and then the SPD
temperature system.  Both solves consume only step ``n-1`` data, so their
order within a step is immaterial.  The time-independent matrices are
assembled once per run and reused; only right-hand sides are rebuilt.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .assembly import (RHS_QUAD_DEGREE, ProblemData, assemble_buoyancy_rhs,
                       assemble_load, assemble_temperature_stiffness,
                       assemble_mass, assemble_transport_rhs,
                       build_flow_system, eliminate_dirichlet, quad_cache,
                       velocity_maps)
from .characteristics import check_cfl, locate_feet
from .errors import CflViolation, ConfigError
from .fields import DiscreteField
from .linsolve import solve_spd, solve_sym_indefinite
from .projection import (ProjectionWorkspace, normalize_pressure,
                         stokes_poisson_project)


@dataclass
class SchemeConfig:
    """Parameters of one run: element pair k, time step, horizon, data."""

    k: int
    dt: float
    T: float
    data: ProblemData
    solver_tol: float = 1e-10
    cfl_policy: str = "abort"

    def __post_init__(self):
        if self.k not in (1, 2):
            raise ConfigError(f"k must be 1 or 2, got {self.k}")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if self.cfl_policy not in ("abort", "warn"):
            raise ConfigError(f"unknown cfl_policy {self.cfl_policy!r}")

    @property
    def n_steps(self):
        # N_T = floor(T / dt); the tiny slack only guards binary roundoff
        n = int(math.floor(self.T / self.dt + 1e-9))
        if n < 1:
            raise ConfigError(
                f"T={self.T} is smaller than dt={self.dt}: no steps to take")
        return n


@dataclass
class State:
    """Discrete solution at one time level plus per-step diagnostics."""

    n: int
    t: float
    u: DiscreteField
    p: DiscreteField
    theta: DiscreteField
    cfl: Optional[object] = None
    diagnostics: dict = field(default_factory=dict)


class RunCaches:
    """Everything assembled once per (mesh, config) and reused across steps."""

    def __init__(self, config, mesh):
        k, data = config.k, config.data
        self.v_map, self.q_map, self.t_map = velocity_maps(mesh, k)
        self.mesh = mesh
        self.flow = build_flow_system(mesh, self.v_map, self.q_map,
                                      data.nu, k, dt=config.dt)
        mass_t = assemble_mass(mesh, self.t_map)
        stiff_t = assemble_temperature_stiffness(mesh, self.t_map,
                                                 kappa=data.kappa)
        self.temp_matrix = eliminate_dirichlet(
            mass_t.mat / config.dt + stiff_t.mat,
            self.t_map.dirichlet_dofs, self.t_map.n_dofs)
        self.cache_k = quad_cache(mesh, k, RHS_QUAD_DEGREE)
        self.projection = ProjectionWorkspace(
            mesh, self.v_map, self.q_map, self.t_map, data, k)
        self.pressure_weights = self.projection.pressure_weights
        self.domain_area = self.projection.domain_area

    def matrices_symmetric(self):
        return self.flow.matrix.symmetric and _csr_symmetric(self.temp_matrix)


def _csr_symmetric(mat, tol=1e-12):
    diff = mat - mat.T
    if diff.nnz == 0:
        return True
    scale = np.abs(mat.data).max()
    return np.abs(diff.data).max() <= tol * scale


def init_state(config, mesh, u0, grad_u0, theta0, grad_theta0, caches=None):
    """Initial state from the Stokes-Poisson projection of (u0, 0, theta0).

    The projected pressure is kept so that the discrete divergence identity
    already holds when the first step is taken.
    """
    if caches is None:
        caches = RunCaches(config, mesh)
    zero_r = lambda x, y: np.zeros_like(x)
    u_h, p_h, t_h, reports = stokes_poisson_project(
        caches.projection, u0, grad_u0, zero_r, theta0, grad_theta0,
        tol=config.solver_tol)
    return State(n=0, t=0.0, u=u_h, p=p_h, theta=t_h,
                 diagnostics={"projection": reports})


def solve_flow(prev, t_next, config, caches, located):
    """The (velocity, pressure) solve of one step; reads only step n-1 data."""
    data = config.data
    mesh, cache = caches.mesh, caches.cache_k
    rhs = assemble_transport_rhs(mesh, caches.v_map, prev.u, prev.u,
                                 config.dt, cache, located=located)
    rhs /= config.dt
    rhs += assemble_buoyancy_rhs(mesh, caches.v_map, prev.theta, data.beta,
                                 t_next, cache, cache)
    rhs += assemble_load(mesh, caches.v_map, data.f_u, t_next, cache)
    rhs[caches.v_map.dirichlet_dofs] = 0.0
    b = caches.flow.pad_rhs(rhs)
    x, report = solve_sym_indefinite(caches.flow.matrix, b,
                                     tol=config.solver_tol,
                                     precond_diag=caches.flow.precond_diag)
    u_c, p_c = caches.flow.split(x)
    p_c = normalize_pressure(p_c, caches.pressure_weights, caches.domain_area)
    u_c[caches.v_map.dirichlet_dofs] = 0.0
    return (DiscreteField(caches.v_map, u_c),
            DiscreteField(caches.q_map, p_c), report, float(np.linalg.norm(b)))


def solve_temperature(prev, t_next, config, caches, located):
    """The temperature solve of one step; reads only step n-1 data."""
    mesh, cache = caches.mesh, caches.cache_k
    rhs = assemble_transport_rhs(mesh, caches.t_map, prev.theta, prev.u,
                                 config.dt, cache, located=located)
    rhs /= config.dt
    rhs += assemble_load(mesh, caches.t_map, config.data.f_theta, t_next, cache)
    rhs[caches.t_map.dirichlet_dofs] = 0.0
    t_c, report = solve_spd(caches.temp_matrix, rhs, tol=config.solver_tol)
    t_c[caches.t_map.dirichlet_dofs] = 0.0
    return DiscreteField(caches.t_map, t_c), report


def step(prev, config, mesh, caches):
    """Advance the state from level n-1 to n."""
    cert = check_cfl(prev.u, config.dt)
    if not cert.ok:
        msg = (f"time-step condition violated at step {prev.n + 1}: "
               f"dt*|u_h|_1,inf = {cert.product:.6g} > 0.25")
        if config.cfl_policy == "abort":
            raise CflViolation(msg, certificate=cert)
        warnings.warn(msg)
    t_next = (prev.n + 1) * config.dt
    located = locate_feet(prev.u, config.dt, caches.cache_k)
    u, p, flow_report, rhs_norm = solve_flow(prev, t_next, config, caches,
                                             located)
    theta, temp_report = solve_temperature(prev, t_next, config, caches,
                                           located)
    diag = {
        "flow": flow_report,
        "temperature": temp_report,
        "rhs_norm": rhs_norm,
        "div_residual": caches.flow.divergence_residual(u.coeffs, p.coeffs),
        "matrices_symmetric": caches.matrices_symmetric(),
    }
    return State(n=prev.n + 1, t=t_next, u=u, p=p, theta=theta, cfl=cert,
                 diagnostics=diag)


def run(config, mesh, u0, grad_u0, theta0, grad_theta0):
    """Generator over states 0..N_T (matrices assembled once, then reused)."""
    n_steps = config.n_steps
    caches = RunCaches(config, mesh)
    state = init_state(config, mesh, u0, grad_u0, theta0, grad_theta0, caches)
    yield state
    for _ in range(n_steps):
        state = step(state, config, mesh, caches)
        yield state


def run_collect(config, mesh, u0, grad_u0, theta0, grad_theta0):
    """Run and keep every state (small problems / tests)."""
    return list(run(config, mesh, u0, grad_u0, theta0, grad_theta0))
