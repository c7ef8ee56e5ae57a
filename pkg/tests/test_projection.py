import numpy as np
import pytest

from lgconvect.assembly import velocity_maps
from lgconvect.fields import DiscreteField, eval_field_grad
from lgconvect.mesh import generate_unit_square
from lgconvect.projection import ProjectionWorkspace, stokes_poisson_project
from lgconvect.verification import (field_errors, manufactured_case,
                                    pressure_error, problem_data)


def workspace(n, k, case=None):
    case = case or manufactured_case("trig")
    mesh = generate_unit_square(n)
    maps = velocity_maps(mesh, k)
    return ProjectionWorkspace(mesh, *maps, problem_data(case), k), case


def discrete_callables(field):
    """(value, gradient) callables evaluating a discrete field pointwise."""
    mesh = field.dof_map.mesh

    def value(x, y):
        pts = np.column_stack([np.ravel(x), np.ravel(y)])
        cells, lams = mesh.locate_points(pts, np.zeros(len(pts), dtype=np.int64))
        from lgconvect.fields import eval_field
        vals = eval_field(field, cells, lams)
        shape = np.shape(x)
        return vals.reshape(shape if field.dof_map.components == 1
                            else shape + (2,))

    def grad(x, y):
        pts = np.column_stack([np.ravel(x), np.ravel(y)])
        cells, lams = mesh.locate_points(pts, np.zeros(len(pts), dtype=np.int64))
        vals = eval_field_grad(field, cells, lams)
        shape = np.shape(x)
        return vals.reshape(shape + ((2,) if field.dof_map.components == 1
                                     else (2, 2)))

    return value, grad


def zero_scalar(x, y):
    return np.zeros_like(x)


def zero_vector(x, y):
    return np.zeros(np.shape(x) + (2,))


def zero_tensor(x, y):
    return np.zeros(np.shape(x) + (2, 2))


@pytest.mark.parametrize("k", [1, 2])
def test_zero_input_projects_to_zero(k):
    ws, _ = workspace(2, k)
    u, p, th, _ = stokes_poisson_project(ws, zero_vector, zero_tensor,
                                         zero_scalar, zero_scalar, zero_vector)
    np.testing.assert_allclose(u.coeffs, 0.0, atol=1e-14)
    np.testing.assert_allclose(p.coeffs, 0.0, atol=1e-14)
    np.testing.assert_allclose(th.coeffs, 0.0, atol=1e-14)


def test_k2_projection_reproduces_discrete_fields():
    # With delta0 = 0 the projection is a Galerkin identity on the
    # discrete spaces.
    ws, _ = workspace(2, 2)
    rng = np.random.default_rng(1)
    ucoef = rng.standard_normal(ws.v_map.n_dofs)
    ucoef[ws.v_map.dirichlet_dofs] = 0.0
    w = DiscreteField(ws.v_map, ucoef)
    pcoef = rng.standard_normal(ws.q_map.n_dofs)
    pcoef -= (ws.pressure_weights @ pcoef) / ws.domain_area
    r = DiscreteField(ws.q_map, pcoef)
    tcoef = rng.standard_normal(ws.t_map.n_dofs)
    tcoef[ws.t_map.dirichlet_dofs] = 0.0
    phi = DiscreteField(ws.t_map, tcoef)

    wf, wg = discrete_callables(w)
    rf, _ = discrete_callables(r)
    pf, pg = discrete_callables(phi)
    u, p, th, _ = stokes_poisson_project(ws, wf, wg, rf, pf, pg, tol=1e-12)
    np.testing.assert_allclose(u.coeffs, w.coeffs, atol=2e-9)
    np.testing.assert_allclose(p.coeffs, r.coeffs, atol=2e-8)
    np.testing.assert_allclose(th.coeffs, phi.coeffs, atol=2e-10)


@pytest.mark.parametrize("k", [1, 2])
def test_temperature_part_is_galerkin_identity(k):
    ws, _ = workspace(3, k)
    rng = np.random.default_rng(2)
    tcoef = rng.standard_normal(ws.t_map.n_dofs)
    tcoef[ws.t_map.dirichlet_dofs] = 0.0
    phi = DiscreteField(ws.t_map, tcoef)
    pf, pg = discrete_callables(phi)
    _, _, th, _ = stokes_poisson_project(ws, zero_vector, zero_tensor,
                                         zero_scalar, pf, pg, tol=1e-12)
    np.testing.assert_allclose(th.coeffs, phi.coeffs, atol=1e-10)


def projection_error_ladder(k, sizes, case):
    rows = []
    for n in sizes:
        ws, _ = workspace(n, k, case)
        u, p, th, _ = stokes_poisson_project(
            ws,
            lambda x, y: case.u(x, y, 0.0),
            lambda x, y: case.grad_u(x, y, 0.0),
            lambda x, y: case.p(x, y, 0.0),
            lambda x, y: case.theta(x, y, 0.0),
            lambda x, y: case.grad_theta(x, y, 0.0))
        cache_k = ws.cache_v
        u_l2, u_h1 = field_errors(u, lambda x, y: case.u(x, y, 0.0),
                                  lambda x, y: case.grad_u(x, y, 0.0), cache_k)
        t_l2, t_h1 = field_errors(th, lambda x, y: case.theta(x, y, 0.0),
                                  lambda x, y: case.grad_theta(x, y, 0.0),
                                  ws.cache_t)
        p_l2 = pressure_error(p, lambda x, y: case.p(x, y, 0.0), ws.cache_q,
                              ws.pressure_weights, ws.domain_area)
        rows.append((u_l2, u_h1, t_l2, t_h1, p_l2))
    return np.array(rows)


@pytest.mark.parametrize("k,sizes", [(1, (32, 64, 128)), (2, (4, 8, 16))])
def test_projection_convergence_orders(k, sizes):
    # The stabilized (k=1) pressure has a sizable preasymptotic plateau that
    # drags the velocity L2 error; its ladder starts at n=32.
    case = manufactured_case("trig")
    rows = projection_error_ladder(k, sizes, case)
    orders = np.log2(rows[:-1] / rows[1:])
    u_l2, u_h1, t_l2, t_h1, p_l2 = orders[-1]
    assert u_h1 >= k - 0.1
    assert t_h1 >= k - 0.1
    # convex domain: L2 superconvergence
    assert u_l2 >= k + 1 - 0.15
    assert t_l2 >= k + 1 - 0.15
    # errors strictly decrease level to level
    assert np.all(rows[1:] < rows[:-1])
