import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from hotemboss.contact import OPEN, ContactParams, ContactSet, HalfSpace, RigidSurface
from hotemboss.fixtures import box_mesh, flat_plate, mirror_mesh
from hotemboss.mechanics import (
    Constraint,
    MechanicalModel,
    PicardNotConverged,
    PressureLoad,
    SingularConstraintError,
    b_matrices,
    recover_fields,
    shrinkage_report,
    tangent_matrix,
    von_mises,
)
from hotemboss.mesh import Mesh, geometry
from hotemboss.thermal import Schedule

from oracles import elastic_tet_solution

T0 = 420.0
UNIT_TET = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]) * 1e-3


def statically_determinate(mesh):
    """3-2-1 support on three corners of a box-shaped mesh (removes only rigid modes)."""
    x = mesh.nodes
    lo, hi = x.min(axis=0), x.max(axis=0)

    def at(p):
        return np.array([int(np.argmin(np.linalg.norm(x - p, axis=1)))])

    return [Constraint(at(lo), (0, 1, 2)), Constraint(at([hi[0], lo[1], lo[2]]), (1, 2)),
            Constraint(at([lo[0], hi[1], lo[2]]), (2,))]


def solve(model, T_new, dt=1.0, T_start=T0, phase="cooling"):
    state = model.initial_state(np.full(model.mesh.n_nodes, T_start))
    return model.picard_step(state, np.broadcast_to(T_new, (model.mesh.n_nodes,)).copy(), dt, phase)


def bulk_modulus(card):
    return card.bulk.instantaneous / 3.0


class TestKinematics:
    def test_b_matrix_of_linear_field(self, rng):
        mesh = box_mesh(1, 1, 1)
        grads, _ = geometry(mesh)
        H = rng.standard_normal((3, 3)) * 1e-3
        u = mesh.nodes @ H.T
        eng = np.einsum("eaj,ej->ea", b_matrices(grads), u[mesh.elements].reshape(-1, 12))
        eps = 0.5 * (H + H.T)
        expected = [eps[0, 0], eps[1, 1], eps[2, 2], 2 * eps[1, 2], 2 * eps[0, 2], 2 * eps[0, 1]]
        assert_allclose(eng, np.tile(expected, (mesh.n_elements, 1)), rtol=1e-10, atol=1e-16)

    def test_tangent_matrix_is_isotropic_elasticity(self):
        E, nu = 2e9, 0.3
        G, K = E / (2 * (1 + nu)), E / (3 * (1 - 2 * nu))
        C = tangent_matrix(np.array([2 * G]), np.array([3 * K]))[0]
        lam = K - 2 * G / 3
        ref = np.diag([2 * G + lam] * 3 + [G] * 3)
        ref[:3, :3] += lam * (1 - np.eye(3))
        assert_allclose(C, ref, rtol=1e-14, atol=1e-3)

    def test_von_mises_uniaxial(self):
        assert_allclose(von_mises(np.array([[5.0, 0, 0, 0, 0, 0]])), [5.0])
        assert_allclose(von_mises(np.array([[0, 0, 0, 0, 0, 2.0]])), [2.0 * np.sqrt(3.0)])


class TestSingleElement:
    def test_isothermal_no_load_is_exact_zero(self, elastic, cube):
        model = MechanicalModel(cube, elastic, statically_determinate(cube))
        res = solve(model, T0)
        assert_array_equal(res.u, 0.0)
        assert_array_equal(res.stress, 0.0)

    def test_linear_problem_takes_one_plus_confirmation_sweep(self, elastic, cube):
        model = MechanicalModel(cube, elastic, statically_determinate(cube))
        assert solve(model, T0 - 10.0).picard_iterations == 2

    def test_free_shrinkage(self, elastic):
        mesh = Mesh(UNIT_TET, [[0, 1, 2, 3]])
        model = MechanicalModel(mesh, elastic, [Constraint(np.array([0]), (0, 1, 2)),
                                                Constraint(np.array([1]), (1, 2)), Constraint(np.array([2]), (2,))])
        dT = -50.0
        res = solve(model, T0 + dT)
        e_th = 7e-5 * dT
        assert_allclose(res.strain[0], [e_th] * 3 + [0.0] * 3, rtol=1e-3, atol=1e-3 * abs(e_th))
        assert_allclose(res.u, UNIT_TET * e_th, rtol=1e-3, atol=1e-3 * abs(e_th) * 1e-3)
        scale = elastic.shear.instantaneous * abs(e_th)
        assert np.abs(res.stress).max() <= 1e-8 * scale

    def test_fully_constrained_hydrostatic_stress(self, elastic):
        mesh = Mesh(UNIT_TET, [[0, 1, 2, 3]])
        model = MechanicalModel(mesh, elastic, [Constraint(np.arange(4), (0, 1, 2))])
        dT = -50.0
        res = solve(model, T0 + dT)
        expected = -3.0 * bulk_modulus(elastic) * 7e-5 * dT
        assert_allclose(res.stress[0, :3], expected, rtol=1e-8)
        assert_allclose(res.stress[0, 3:], 0.0, atol=1e-8 * abs(expected))

    def test_singular_constraints(self, elastic, cube):
        model = MechanicalModel(cube, elastic, [Constraint(cube.nodes_of("zmin"), (2,))])
        with pytest.raises(SingularConstraintError, match="rigid-body"):
            solve(model, T0 - 1.0)

    def test_invalid_dt(self, elastic, cube):
        model = MechanicalModel(cube, elastic, statically_determinate(cube))
        with pytest.raises(ValueError):
            solve(model, T0, dt=0.0)


class TestPatch:
    def test_constant_stress_from_boundary_displacement(self, elastic, rng):
        mesh = box_mesh(3, 3, 3, size=(1e-3, 1e-3, 1e-3))
        # perturb interior nodes so the patch is irregular
        x = mesh.nodes
        interior = np.all((x > 1e-9) & (x < 1e-3 - 1e-9), axis=1)
        mesh.nodes = x + np.where(interior[:, None], rng.uniform(-5e-5, 5e-5, x.shape), 0.0)
        H = rng.standard_normal((3, 3)) * 1e-4
        boundary = np.flatnonzero(~interior)
        cons = [Constraint(np.array([n]), (k,), Schedule.constant(float(mesh.nodes[n] @ H[k])))
                for n in boundary for k in range(3)]
        model = MechanicalModel(mesh, elastic, cons, picard_tol=1e-10)
        res = solve(model, T0)
        sig = res.stress
        assert_allclose(sig, np.tile(sig.mean(axis=0), (mesh.n_elements, 1)), rtol=0,
                        atol=1e-10 * np.abs(sig).max() * 1e2)
        assert_allclose(res.u, mesh.nodes @ H.T, rtol=1e-8, atol=1e-16)

    def test_rigid_translation_is_stress_free(self, elastic, cube):
        c = np.array([1e-5, -2e-5, 3e-6])
        cons = [Constraint(np.arange(cube.n_nodes), (k,), Schedule.constant(c[k])) for k in range(3)]
        res = solve(MechanicalModel(cube, elastic, cons), T0)
        assert_allclose(res.u, np.tile(c, (cube.n_nodes, 1)), rtol=1e-15)
        assert np.abs(res.stress).max() <= 1e-12 * elastic.shear.instantaneous * 1e-5

    def test_deviator_is_traceless(self, pmma):
        mesh = box_mesh(2, 2, 2, size=(1e-3, 1e-3, 1e-3))
        cons = [Constraint(mesh.nodes_of("zmin"), (0, 1, 2))]
        res = solve(MechanicalModel(mesh, pmma, cons), np.linspace(400.0, 380.0, mesh.n_nodes), T_start=T0)
        sph = res.stress[:, :3].mean(axis=1)
        dev = res.stress.copy()
        dev[:, :3] -= sph[:, None]
        assert np.abs(dev[:, :3].sum(axis=1)).max() <= 1e-10 * np.abs(res.stress).max()


class TestElasticEquivalence:
    def test_matches_dense_elastic_solver(self, elastic, rng):
        mesh = box_mesh(3, 2, 2, size=(3e-3, 2e-3, 1e-3))
        T_new = T0 - 60.0 + 20.0 * rng.random(mesh.n_nodes)
        cons = [Constraint(mesh.nodes_of("zmin"), (0, 1, 2)), Constraint(mesh.nodes_of("xmax"), (0,))]
        model = MechanicalModel(mesh, elastic, cons, picard_tol=1e-10)
        res = solve(model, T_new)
        fixed = np.unique(np.concatenate([3 * mesh.nodes_of("zmin")[:, None] + np.arange(3),
                                          3 * mesh.nodes_of("xmax")[:, None]], axis=None))
        eig = 7e-5 * (T_new[mesh.elements].mean(axis=1) - T0)
        ref = elastic_tet_solution(mesh.nodes, mesh.elements, 2e9, 0.3, fixed, np.zeros(fixed.size),
                                   np.zeros(3 * mesh.n_nodes), eig)
        assert np.linalg.norm(res.u.ravel() - ref) <= 1e-8 * np.linalg.norm(ref)

    def test_pressure_load(self, elastic):
        mesh = box_mesh(2, 2, 2, size=(1e-3, 1e-3, 1e-3))
        cons = [Constraint(mesh.nodes_of("zmin"), (2,)), Constraint(mesh.nodes_of("xmin"), (0,)),
                Constraint(mesh.nodes_of("ymin"), (1,))]
        model = MechanicalModel(mesh, elastic, cons, pressure=PressureLoad(mesh.facet_sets["zmax"], 1e6),
                                picard_tol=1e-10)
        res = solve(model, T0)
        assert_allclose(res.stress[:, 2], -1e6, rtol=1e-8)
        assert_allclose(res.stress[:, [0, 1, 3, 4, 5]], 0.0, atol=1e-8 * 1e6)
        # load is limited to the cooling phase
        assert_array_equal(model.external_load("demolding"), 0.0)


class TestViscoelastic:
    def test_stress_free_uniform_cooling(self, pmma, cube):
        model = MechanicalModel(cube, pmma, statically_determinate(cube))
        state = model.initial_state(np.full(cube.n_nodes, 456.15))
        e_th = 0.0
        for T in np.linspace(450.0, 350.0, 6):
            res = model.picard_step(state, np.full(cube.n_nodes, T), 2.0)
            state = model.commit(res)
            e_th = max(e_th, np.abs(state.points.thermal_strain).max())
        assert e_th > 0.0
        scale = max(pmma.shear.instantaneous, pmma.bulk.instantaneous) * e_th
        assert np.abs(res.stress).max() <= 1e-8 * scale

    def test_state_not_modified_until_commit(self, pmma, cube):
        model = MechanicalModel(cube, pmma, [Constraint(cube.nodes_of("zmin"), (0, 1, 2))])
        state = model.initial_state(np.full(cube.n_nodes, 456.15))
        before = state.copy()
        model.picard_step(state, np.full(cube.n_nodes, 440.0), 1.0)
        assert_array_equal(state.u, before.u)
        assert_array_equal(state.points.strain, before.points.strain)
        assert_array_equal(state.points.reduced_time, before.points.reduced_time)

    def test_stress_matches_recorded_history(self, pmma, cube):
        model = MechanicalModel(cube, pmma, [Constraint(cube.nodes_of("zmin"), (0, 1, 2))])
        state = model.initial_state(np.full(cube.n_nodes, 456.15))
        for T in (440.0, 420.0, 400.0):
            res = model.picard_step(state, np.full(cube.n_nodes, T), 1.0)
            state = model.commit(res)
        assert_allclose(model.stress_of(state), res.stress, rtol=1e-10, atol=1e-6)


class TestSymmetry:
    def test_quarter_equals_full(self, elastic):
        quarter = flat_plate(nx=4, ny=2, nz=2)
        full = mirror_mesh(mirror_mesh(quarter, 0), 1)

        def temps(x):
            # even in x and y, varying through the thickness
            return T0 - 40.0 - 5e3 * np.abs(x[:, 0]) - 2e3 * np.abs(x[:, 1]) - 2e4 * x[:, 2]

        def run(mesh, sym):
            cons = [Constraint(mesh.nodes_of("substrate"), (0, 1, 2))]
            if sym:
                cons += [Constraint(mesh.nodes_of("sym_x"), (0,)), Constraint(mesh.nodes_of("sym_y"), (1,))]
            model = MechanicalModel(mesh, elastic, cons, picard_tol=1e-10)
            return solve(model, temps(mesh.nodes)).u

        uq = run(quarter, True)
        uf = run(full, False)
        # mirror_mesh keeps the original nodes first
        assert_allclose(uf[: quarter.n_nodes], uq, rtol=0, atol=1e-7 * np.abs(uq).max())


def plate_with_mold(card, delta, start_time=np.inf, opening=None):
    mesh = flat_plate(nx=4, ny=2, nz=2)
    top = mesh.nodes[:, 2].max()
    surf = RigidSurface([HalfSpace([0.0, 0.0, top - delta], [0.0, 0.0, -1.0])],
                        opening=opening or Schedule.constant(0.0), start_time=start_time)
    cs = ContactSet(mesh.nodes_of("mold_interface"), surf, ContactParams(1e8, 1e7))
    cons = [Constraint(mesh.nodes_of("substrate"), (0, 1, 2))]
    model = MechanicalModel(mesh, card, cons, contact=cs, friction={"cooling": False, "demolding": False},
                            picard_tol=1e-10)
    return mesh, model


class TestContactCoupling:
    def test_press_then_release(self, elastic):
        delta = 2e-7
        mesh, model = plate_with_mold(elastic, delta, start_time=1.0, opening=Schedule([0.0, 1.0], [0.0, 1e-5]))
        state = model.initial_state(np.full(mesh.n_nodes, T0))
        pressed = model.picard_step(state, np.full(mesh.n_nodes, T0), 1.0)
        assert np.all(pressed.contact.status != OPEN)
        assert pressed.u[:, 2].min() < 0.0
        state = model.commit(pressed)
        released = model.picard_step(state, np.full(mesh.n_nodes, T0), 1.0)
        assert np.all(released.contact.status == OPEN)
        assert_array_equal(released.contact.f_n, 0.0)
        assert np.abs(released.u).max() <= 1e-9 * np.abs(pressed.u).max()
        assert np.abs(released.stress).max() <= 1e-9 * np.abs(pressed.stress).max()

    def test_equilibrium_residual(self, elastic):
        # a 2 K cooling shrinks the plate by ~7e-8 m, less than the 2e-7 m press
        mesh, model = plate_with_mold(elastic, 2e-7)
        res = solve(model, T0 - 2.0)
        assert np.all(res.contact.status != OPEN)
        fixed, _ = model.constrained_dofs("cooling", res.u, res.time)
        free = np.setdiff1d(np.arange(model.n_dofs), fixed)
        f_int = model.internal_force(res.stress)
        f_ext = model.external_load("cooling")
        f_c = model.contact_force_vector(res.contact)
        resid = f_int - f_ext - f_c
        assert np.linalg.norm(resid[free]) <= 1e-6 * np.linalg.norm((f_ext + f_c)[free])

    def test_picard_failure_raises(self, elastic):
        mesh, model = plate_with_mold(elastic, 2e-7)
        model.max_picard = 1
        with pytest.raises(PicardNotConverged):
            solve(model, T0 - 20.0)


class TestRecovery:
    def test_amplification(self, cube):
        u = np.tile([1e-5, 0.0, 0.0], (cube.n_nodes, 1))
        assert_array_equal(recover_fields(cube, u, amplification=0.0)["points"], cube.nodes)
        moved = recover_fields(cube, u, amplification=25.0)["points"]
        assert_allclose(moved - cube.nodes, np.tile([2.5e-4, 0.0, 0.0], (cube.n_nodes, 1)), rtol=1e-12)

    def test_rigid_translation_has_zero_strain(self, cube):
        out = recover_fields(cube, np.tile([1e-5, 2e-5, -1e-5], (cube.n_nodes, 1)))
        for k in ("eps_xx", "eps_yy", "eps_zz", "eps_yz", "eps_xz", "eps_xy"):
            assert np.abs(out[k]).max() <= 1e-15

    def test_stress_fields(self, cube):
        s = np.zeros((cube.n_elements, 6))
        s[:, 0] = 3.0
        out = recover_fields(cube, np.zeros((cube.n_nodes, 3)), s)
        assert_array_equal(out["s_xx"], 3.0)
        assert_allclose(out["pressure"], -1.0)


class TestShrinkage:
    def test_zero(self, cube):
        rep = shrinkage_report(cube, np.zeros((cube.n_nodes, 3)))
        assert rep["shrinkage"] == [0.0, 0.0, 0.0]

    def test_uniform_contraction(self, cube):
        eps = -3e-3
        rep = shrinkage_report(cube, eps * cube.nodes)
        assert_allclose(rep["shrinkage"], [eps] * 3, rtol=1e-12)

    def test_feature_offsets(self, cube):
        cube.node_sets["feature_corner"] = np.array([int(np.argmax(cube.nodes.sum(axis=1)))])
        u = -1e-3 * cube.nodes
        rep = shrinkage_report(cube, u)
        # the corner moves by -1e-6 per axis, the center by -0.5e-6
        assert_allclose(rep["feature_offsets_m"]["feature_corner"], [-0.5e-6] * 3, rtol=1e-12)

    def test_free_slow_cooling_of_plate(self, elastic):
        plate = flat_plate(nx=4, ny=2, nz=2)
        model = MechanicalModel(plate, elastic, statically_determinate(plate))
        dT = -80.0
        res = solve(model, T0 + dT)
        assert_allclose(shrinkage_report(plate, res.u)["shrinkage"], [7e-5 * dT] * 3, rtol=1e-3)
