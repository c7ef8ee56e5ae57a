import numpy as np
import pytest

from lgconvect.assembly import (RHS_QUAD_DEGREE, ProblemData, SparseSymMatrix,
                                assemble_buoyancy_rhs, assemble_divergence,
                                assemble_flow_system, assemble_mass,
                                assemble_pressure_stabilization,
                                assemble_temperature_stiffness,
                                assemble_transport_rhs,
                                assemble_velocity_stiffness, build_dof_map,
                                quad_cache, velocity_maps)
from lgconvect.fields import DiscreteField, interpolate, zero_field
from lgconvect.mesh import Mesh, generate_unit_square, refine_uniform

from oracles import CellOracle, oracle_global
from test_mesh import perturbed_mesh


def reference_triangle_mesh():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return Mesh(nodes, np.array([[0, 1, 2]]))


def test_p1_mass_reference_triangle():
    mesh = reference_triangle_mesh()
    dm = build_dof_map(mesh, 1, components=1)
    M = assemble_mass(mesh, dm).toarray()
    expect = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 24.0
    np.testing.assert_allclose(M, expect, atol=1e-15)


def test_p1_stiffness_reference_triangle():
    mesh = reference_triangle_mesh()
    dm = build_dof_map(mesh, 1, components=1)
    K = assemble_temperature_stiffness(mesh, dm, kappa=1.0).toarray()
    expect = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    np.testing.assert_allclose(K, expect, atol=1e-15)


def test_stiffness_scales_with_kappa():
    mesh = generate_unit_square(2)
    dm = build_dof_map(mesh, 1, components=1)
    K1 = assemble_temperature_stiffness(mesh, dm, kappa=1.0).mat
    K2 = assemble_temperature_stiffness(mesh, dm, kappa=2.0).mat
    assert abs(K2 - 2.0 * K1).max() < 1e-14


def test_stiffness_annihilates_constants():
    mesh = generate_unit_square(3)
    for degree in (1, 2):
        dm = build_dof_map(mesh, degree, components=1)
        K = assemble_temperature_stiffness(mesh, dm)
        c = np.ones(dm.n_dofs)
        np.testing.assert_allclose(K.matvec(c), 0.0, atol=1e-13)


def test_velocity_stiffness_annihilates_rigid_motions():
    mesh = perturbed_mesh(3, seed=5)
    for degree in (1, 2):
        vm = build_dof_map(mesh, degree, components=2)
        A = assemble_velocity_stiffness(mesh, vm, nu=0.7)
        const = interpolate(vm, lambda x, y: np.stack(
            [np.full_like(x, 1.3), np.full_like(x, -2.0)], axis=-1))
        rot = interpolate(vm, lambda x, y: np.stack([-y, x], axis=-1))
        np.testing.assert_allclose(A.matvec(const.coeffs), 0.0, atol=1e-12)
        np.testing.assert_allclose(A.matvec(rot.coeffs), 0.0, atol=1e-12)


def test_mass_row_sums_equal_domain_area():
    mesh = perturbed_mesh(4, seed=2)
    dm = build_dof_map(mesh, 1, components=1)
    M = assemble_mass(mesh, dm)
    assert M.mat.sum() == pytest.approx(1.0, abs=1e-13)


def test_vector_mass_is_block_diagonal():
    mesh = generate_unit_square(2)
    sm = build_dof_map(mesh, 2, components=1)
    vm = build_dof_map(mesh, 2, components=2)
    Ms = assemble_mass(mesh, sm).toarray()
    Mv = assemble_mass(mesh, vm).toarray()
    n = sm.n_dofs
    np.testing.assert_allclose(Mv[:n, :n], Ms, atol=1e-15)
    np.testing.assert_allclose(Mv[n:, n:], Ms, atol=1e-15)
    assert np.all(Mv[:n, n:] == 0.0)


def test_divergence_constant_field_and_unit_pressure():
    mesh = generate_unit_square(3)
    for degree in (1, 2):
        vm = build_dof_map(mesh, degree, components=2)
        qm = build_dof_map(mesh, 1, components=1, homogeneous_dirichlet=False)
        B = assemble_divergence(mesh, vm, qm)
        const = interpolate(vm, lambda x, y: np.stack(
            [np.ones_like(x), np.ones_like(x)], axis=-1))
        np.testing.assert_allclose(B @ const.coeffs, 0.0, atol=1e-13)
        # v = (x, 0): row of q = 1 gives -int(div v) = -1
        linear = interpolate(vm, lambda x, y: np.stack(
            [x, np.zeros_like(x)], axis=-1))
        ones = np.ones(qm.n_dofs)
        assert ones @ (B @ linear.coeffs) == pytest.approx(-1.0, abs=1e-13)


def test_divergence_adjoint_is_exact_transpose():
    mesh = perturbed_mesh(2, seed=9)
    vm = build_dof_map(mesh, 2, components=2)
    qm = build_dof_map(mesh, 1, components=1, homogeneous_dirichlet=False)
    B = assemble_divergence(mesh, vm, qm).toarray()

    def block(c):
        orc = CellOracle(mesh, c, 2)
        blk = orc.divergence_block()
        return blk.T, vm.cell_dofs[c], qm.cell_dofs[c]

    Bt_oracle = oracle_global(mesh, vm, block, shape=(vm.n_dofs, qm.n_dofs))
    np.testing.assert_allclose(B.T, Bt_oracle, atol=1e-13)


def test_stabilization_constant_kernel_and_h2_scaling():
    mesh = generate_unit_square(4)  # uniform: all h_K equal h
    qm = build_dof_map(mesh, 1, components=1, homogeneous_dirichlet=False)
    C = assemble_pressure_stabilization(mesh, qm)
    np.testing.assert_allclose(C.matvec(np.ones(qm.n_dofs)), 0.0, atol=1e-14)
    K = assemble_temperature_stiffness(mesh, qm, kappa=1.0)
    np.testing.assert_allclose(C.toarray(), mesh.h ** 2 * K.toarray(),
                               atol=1e-14)
    fine = refine_uniform(mesh)
    qmf = build_dof_map(fine, 1, components=1, homogeneous_dirichlet=False)
    Cf = assemble_pressure_stabilization(fine, qmf)
    Kf = assemble_temperature_stiffness(fine, qmf, kappa=1.0)
    np.testing.assert_allclose(Cf.toarray(), (mesh.h / 2) ** 2 * Kf.toarray(),
                               atol=1e-14)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_global_matrices_match_dense_oracle(seed):
    mesh = perturbed_mesh(2, seed=seed)
    degree = 1 + seed % 2
    sm = build_dof_map(mesh, degree, components=1)
    vm = build_dof_map(mesh, degree, components=2)
    qm = build_dof_map(mesh, 1, components=1, homogeneous_dirichlet=False)
    nu = 0.37

    M = assemble_mass(mesh, sm).toarray()
    K = assemble_temperature_stiffness(mesh, sm, kappa=1.3).toarray()
    A = assemble_velocity_stiffness(mesh, vm, nu=nu).toarray()
    B = assemble_divergence(mesh, vm, qm).toarray()
    C = assemble_pressure_stabilization(mesh, qm).toarray()

    n = sm.n_scalar

    def mass_block(c):
        orc = CellOracle(mesh, c, degree)
        return orc.mass_block(), sm.cell_dofs[c], sm.cell_dofs[c]

    def stiff_block(c):
        orc = CellOracle(mesh, c, degree)
        return orc.stiffness_block(1.3), sm.cell_dofs[c], sm.cell_dofs[c]

    def vel_block(c):
        orc = CellOracle(mesh, c, degree)
        return orc.velocity_stiffness_block(nu), vm.cell_dofs[c], vm.cell_dofs[c]

    def div_block(c):
        orc = CellOracle(mesh, c, degree)
        return orc.divergence_block(), qm.cell_dofs[c], vm.cell_dofs[c]

    def stab_block(c):
        orc = CellOracle(mesh, c, 1)
        return (mesh.h_K[c] ** 2 * orc.stiffness_block(),
                qm.cell_dofs[c], qm.cell_dofs[c])

    np.testing.assert_allclose(M, oracle_global(mesh, sm, mass_block), atol=1e-13)
    np.testing.assert_allclose(K, oracle_global(mesh, sm, stiff_block), atol=1e-12)
    np.testing.assert_allclose(A, oracle_global(mesh, vm, vel_block), atol=1e-12)
    np.testing.assert_allclose(
        B, oracle_global(mesh, qm, div_block, shape=(qm.n_dofs, vm.n_dofs)),
        atol=1e-13)
    np.testing.assert_allclose(
        C, oracle_global(mesh, qm, stab_block), atol=1e-13)


def test_symmetry_certificates():
    mesh = perturbed_mesh(3, seed=4)
    for k in (1, 2):
        vm, qm, tm = velocity_maps(mesh, k)
        data = _unit_data()
        mats = [
            assemble_mass(mesh, vm),
            assemble_velocity_stiffness(mesh, vm, nu=2.0),
            assemble_temperature_stiffness(mesh, tm, kappa=0.5),
            assemble_pressure_stabilization(mesh, qm),
            assemble_flow_system(mesh, vm, qm, data, dt=0.1, k=k).matrix,
        ]
        for mat in mats:
            assert mat.symmetric, f"symmetry error {mat.symmetry_error}"


def _unit_data():
    return ProblemData(
        nu=1.0, kappa=1.0,
        beta=lambda x, y, t: np.stack([np.zeros_like(x), np.ones_like(x)], axis=-1),
        f_u=lambda x, y, t: np.stack([np.zeros_like(x), np.zeros_like(x)], axis=-1),
        f_theta=lambda x, y, t: np.zeros_like(x))


def test_flow_system_k2_has_zero_pressure_block():
    mesh = generate_unit_square(2)
    vm, qm, _ = velocity_maps(mesh, 2)
    sys2 = assemble_flow_system(mesh, vm, qm, _unit_data(), dt=0.2, k=2)
    assert sys2.has_multiplier
    dense = sys2.matrix.toarray()
    qslice = slice(sys2.n_v, sys2.n_v + sys2.n_q)
    assert np.all(dense[qslice, qslice] == 0.0)
    sys1 = assemble_flow_system(mesh, *velocity_maps(mesh, 1)[:2],
                                _unit_data(), dt=0.2, k=1)
    assert not sys1.has_multiplier
    dense1 = sys1.matrix.toarray()
    qslice1 = slice(sys1.n_v, sys1.n_v + sys1.n_q)
    assert np.any(dense1[qslice1, qslice1] != 0.0)


def test_probe_data_validation():
    with pytest.raises(ValueError):
        ProblemData(nu=0.0, kappa=1.0, beta=None, f_u=None, f_theta=None)
    with pytest.raises(ValueError):
        ProblemData(nu=1.0, kappa=-2.0, beta=None, f_u=None, f_theta=None)


def test_sparse_sym_matrix_rejects_rectangular():
    import scipy.sparse as sp
    with pytest.raises(ValueError):
        SparseSymMatrix(sp.csr_matrix((2, 3)))


# -- right-hand sides -------------------------------------------------------

def rhs_cache(mesh, degree):
    return quad_cache(mesh, degree, RHS_QUAD_DEGREE)


def test_transport_rhs_zero_velocity_equals_mass_product():
    mesh = perturbed_mesh(3, seed=8)
    rng = np.random.default_rng(3)
    for degree in (1, 2):
        for components in (1, 2):
            dm = build_dof_map(mesh, degree, components=components)
            vm = build_dof_map(mesh, degree, components=2)
            field = DiscreteField(dm, rng.standard_normal(dm.n_dofs))
            w = zero_field(vm)
            cache = rhs_cache(mesh, degree)
            rhs = assemble_transport_rhs(mesh, dm, field, w, dt=0.05, cache=cache)
            M = assemble_mass(mesh, dm)
            expect = M.matvec(field.coeffs)
            scale = np.abs(expect).max()
            np.testing.assert_allclose(rhs, expect, atol=1e-12 * max(scale, 1.0))


def test_transport_rhs_constant_field_gives_mass_sums():
    mesh = generate_unit_square(3)
    dm = build_dof_map(mesh, 1, components=1)
    vm = build_dof_map(mesh, 1, components=2)
    w = interpolate(vm, lambda x, y: np.stack(
        [0.2 * np.sin(np.pi * x) * np.sin(np.pi * y), np.zeros_like(x)], axis=-1))
    cache = rhs_cache(mesh, 1)
    rhs = assemble_transport_rhs(mesh, dm, lambda x, y: np.ones_like(x), w,
                                 dt=0.1, cache=cache)
    M = assemble_mass(mesh, dm)
    np.testing.assert_allclose(rhs, M.matvec(np.ones(dm.n_dofs)), atol=1e-13)


def test_transport_rhs_constant_velocity_shifts_linear_field():
    # w = (c, 0) and field(x, y) = x: entries shift analytically by -c*dt
    mesh = generate_unit_square(4)
    c, dt = 0.05, 0.1
    for degree in (1, 2):
        dm = build_dof_map(mesh, degree, components=1)
        vm = build_dof_map(mesh, degree, components=2)
        w = interpolate(vm, lambda x, y: np.stack(
            [np.full_like(x, c), np.zeros_like(x)], axis=-1))
        cache = rhs_cache(mesh, degree)
        rhs = assemble_transport_rhs(mesh, dm, lambda x, y: x, w, dt=dt,
                                     cache=cache)
        M = assemble_mass(mesh, dm)
        xfield = interpolate(dm, lambda x, y: x)
        expect = M.matvec(xfield.coeffs) - c * dt * M.matvec(np.ones(dm.n_dofs))
        np.testing.assert_allclose(rhs, expect, atol=1e-13)


def test_buoyancy_rhs_zero_cases_and_unit_theta():
    mesh = generate_unit_square(3)
    vm, qm, tm = velocity_maps(mesh, 2)
    cache_v = rhs_cache(mesh, 2)
    cache_t = rhs_cache(mesh, 2)
    beta01 = lambda x, y, t: np.stack([np.zeros_like(x), np.ones_like(x)], axis=-1)
    zero = assemble_buoyancy_rhs(mesh, vm, zero_field(tm), beta01, 0.0,
                                 cache_v, cache_t)
    np.testing.assert_array_equal(zero, 0.0)
    beta0 = lambda x, y, t: np.zeros(x.shape + (2,))
    ones_theta = DiscreteField(tm, np.ones(tm.n_dofs))
    zero2 = assemble_buoyancy_rhs(mesh, vm, ones_theta, beta0, 0.0,
                                  cache_v, cache_t)
    np.testing.assert_array_equal(zero2, 0.0)
    rhs = assemble_buoyancy_rhs(mesh, vm, ones_theta, beta01, 0.0,
                                cache_v, cache_t)
    Ms = assemble_mass(mesh, tm)
    sums = np.asarray(Ms.mat.sum(axis=1)).ravel()
    np.testing.assert_allclose(rhs[:vm.n_scalar], 0.0, atol=1e-15)
    np.testing.assert_allclose(rhs[vm.n_scalar:], sums, atol=1e-13)
