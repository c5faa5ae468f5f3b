import logging
import math

import numpy as np
import pytest
from scipy.sparse import identity

from adapod import fem
from adapod.errors import FormatError, NewtonError, SolverError, SpaceError
from adapod.fem import (
    FeFunction,
    assemble,
    assemble_load,
    build_space,
    burgers_fom_step,
    element_stiffness,
    inner_product_matrix,
    load_function,
    save_function,
    solve_elliptic,
    solve_linear,
    trilinear_apply,
)
from adapod.mesh import new_structured, uniform_refine

from util import h1_semi_error, neumann_tags, periodic_x_tags


class TestBuildSpace:
    def test_all_dirichlet_minimal_square(self):
        space = build_space(new_structured(1, 1))
        assert space.n_dof == 0

    def test_interior_dof_count(self):
        space = build_space(new_structured(4, 4))
        assert space.n_dof == 9

    def test_periodic_alias_count(self):
        mesh = new_structured(4, 3, ylim=(0.0, 0.5), tags=periodic_x_tags())
        space = build_space(mesh, ip="h1_full")
        assert space.n_dof == mesh.n_vertices - 4
        # every x=1 vertex aliases the x=0 vertex at equal height
        right = np.flatnonzero(mesh.vertices[:, 0] == 1.0)
        for v in right:
            m = space.alias_master[v]
            assert m >= 0
            assert mesh.vertices[m, 0] == 0.0
            assert mesh.vertices[m, 1] == mesh.vertices[v, 1]

    def test_unmatched_periodic_vertex_reported(self):
        mesh = new_structured(2, 2, tags=periodic_x_tags())
        # refine only along the right boundary without the lockstep pass
        from adapod.mesh import _Forest
        f = _Forest.from_mesh(mesh)
        right_edges = [e for e, t in list(f.edge_tags.items())
                       if t == "periodic_right"]
        f.split_edge(*right_edges[0])
        broken = f.to_mesh()
        with pytest.raises(SpaceError, match="no partner"):
            build_space(broken, ip="h1_full")

    def test_rejects_unknown_inner_product(self):
        with pytest.raises(SpaceError):
            build_space(new_structured(1, 1), ip="l2")


class TestAssemble:
    def test_mass_row_sums_are_lumped_areas(self):
        mesh = new_structured(3, 2, tags=neumann_tags())
        space = build_space(mesh)
        m = assemble(space, "mass")
        sums = np.asarray(m.sum(axis=1)).ravel()
        assert abs(sums.sum() - 1.0) < 1e-13
        # row sum of vertex v = area of its support / 3
        tri = mesh.triangles
        areas = mesh.triangle_areas()
        support = np.zeros(mesh.n_vertices)
        for k in range(3):
            np.add.at(support, tri[:, k], areas)
        assert np.allclose(sums, support / 3.0, atol=1e-14)

    def test_stiffness_kills_constants(self):
        space = build_space(new_structured(3, 3), bc=fem.BoundaryConditions(
            fixed_tags=()), ip="h1_semi")
        k = assemble(space, "stiffness")
        ones = np.ones(space.n_dof)
        assert np.abs(k @ ones).max() < 1e-13

    def test_reference_element_stiffness(self):
        k = element_stiffness([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)])
        expect = np.array([[1.0, -0.5, -0.5],
                           [-0.5, 0.5, 0.0],
                           [-0.5, 0.0, 0.5]])
        assert np.allclose(k, expect, atol=1e-15)

    def test_mass_and_stiffness_symmetric(self):
        mesh = new_structured(4, 3)
        space = build_space(mesh)
        for kind in ("mass", "stiffness"):
            a = assemble(space, kind)
            assert abs(a - a.T).max() <= 1e-14

    def test_convection_skew_on_periodic_space(self):
        mesh = new_structured(4, 2, ylim=(0.0, 0.5), tags=periodic_x_tags())
        space = build_space(mesh, ip="h1_full")
        cx = assemble(space, "convection_x")
        ones = np.ones(space.n_dof)
        assert np.abs((cx + cx.T) @ ones).max() < 1e-12


class TestLoad:
    def test_constant_load_sums_to_domain_area(self):
        mesh = new_structured(3, 3, xlim=(0.0, 2.0), tags=neumann_tags())
        space = build_space(mesh)
        f = assemble_load(space, 1.0)
        assert abs(f.sum() - 2.0) < 1e-13

    def test_zero_load(self):
        space = build_space(new_structured(2, 2))
        assert np.all(assemble_load(space, 0.0) == 0.0)

    def test_interior_hat_integrals_on_4x4_grid(self):
        space = build_space(new_structured(4, 4))
        f = assemble_load(space, 1.0)
        assert f.shape == (9,)
        assert np.allclose(f, 1.0 / 16.0, atol=1e-15)


class TestTrilinear:
    def test_zero_first_argument(self):
        mesh = new_structured(2, 2, tags=periodic_x_tags())
        space = build_space(mesh, ip="h1_full")
        z = FeFunction(space, np.zeros(space.n_dof))
        w = FeFunction(space, np.arange(space.n_dof, dtype=float))
        assert np.all(trilinear_apply(space, z, w) == 0.0)

    def test_constant_second_argument(self):
        mesh = new_structured(3, 2, tags=periodic_x_tags())
        space = build_space(mesh, ip="h1_full")
        rng = np.random.default_rng(0)
        v = FeFunction(space, rng.standard_normal(space.n_dof))
        w = FeFunction(space, np.full(space.n_dof, 2.5))
        assert np.abs(trilinear_apply(space, v, w)).max() < 1e-14

    def test_periodic_cubic_cancellation(self):
        mesh = new_structured(4, 2, ylim=(0.0, 0.5), tags=periodic_x_tags())
        space = build_space(mesh, ip="h1_full")
        rng = np.random.default_rng(42)
        for _ in range(5):
            u = FeFunction(space, rng.standard_normal(space.n_dof))
            val = float(trilinear_apply(space, u, u) @ u.coeffs)
            scale = max(1.0, float(np.abs(u.coeffs).max()) ** 3)
            assert abs(val) < 1e-12 * scale

    def test_space_mismatch_rejected(self):
        s1 = build_space(new_structured(2, 2))
        s2 = build_space(new_structured(2, 2))
        u = FeFunction(s1, np.zeros(s1.n_dof))
        w = FeFunction(s2, np.zeros(s2.n_dof))
        with pytest.raises(SpaceError):
            trilinear_apply(s1, u, w)


class TestSolveLinear:
    def test_identity(self):
        rhs = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(solve_linear(identity(3, format="csr"), rhs),
                              rhs)

    def test_small_symmetric_system(self):
        from scipy.sparse import csr_matrix
        a = csr_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
        x = solve_linear(a, np.array([3.0, 3.0]))
        assert np.allclose(x, [1.0, 1.0], atol=1e-14)

    def test_random_spd_residual(self):
        from scipy.sparse import csr_matrix
        rng = np.random.default_rng(1)
        b = rng.standard_normal((50, 50))
        a = csr_matrix(b @ b.T + 50 * np.eye(50))
        rhs = rng.standard_normal(50)
        x = solve_linear(a, rhs)
        assert np.abs(a @ x - rhs).max() <= 1e-10 * np.abs(rhs).max()

    def test_singular_matrix_reported(self):
        from scipy.sparse import csr_matrix
        a = csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
        with pytest.raises(SolverError):
            solve_linear(a, np.array([1.0, 2.0]))


class TestSolveElliptic:
    def test_zero_load_gives_zero(self):
        space = build_space(new_structured(4, 4))
        u = solve_elliptic(space, 1.0, 0.5, 0.01, 0.0)
        assert np.all(u.coeffs == 0.0)

    def test_manufactured_solution_first_order(self):
        nu = 0.3

        def f(x, y):
            return (2.0 * nu * math.pi ** 2
                    * np.sin(math.pi * x) * np.sin(math.pi * y))

        def grad(x, y):
            return (math.pi * np.cos(math.pi * x) * np.sin(math.pi * y),
                    math.pi * np.sin(math.pi * x) * np.cos(math.pi * y))

        mesh = new_structured(4, 4)
        errors = []
        for _ in range(4):
            space = build_space(mesh)
            u = solve_elliptic(space, 0.0, 0.0, nu, f)
            errors.append(h1_semi_error(u, grad))
            mesh = uniform_refine(mesh)
        ratios = [errors[i] / errors[i + 1] for i in range(3)]
        assert all(1.7 <= r <= 2.3 for r in ratios), ratios

    def test_boundary_layer_case_stays_bounded(self):
        # mesh fine enough to resolve the outflow layer (cell Peclet < 1);
        # the plain Galerkin scheme overshoots on coarser grids
        space = build_space(new_structured(64, 64))
        u = solve_elliptic(space, 1.0, 0.0, 0.01, 1.0)
        assert 0.0 < u.coeffs.max() < 1.0

    def test_rejects_nonpositive_diffusivity(self):
        space = build_space(new_structured(2, 2))
        with pytest.raises(SolverError):
            solve_elliptic(space, 1.0, 0.0, 0.0, 1.0)


def _initial_profile(x, y):
    return (0.5 + 0.5 * np.sin((x - y - 0.75) * np.pi)
            * np.sin((x + y + 0.25) * np.pi))


def _burgers_space(refines=1):
    mesh = new_structured(8, 4, ylim=(0.0, 0.5), tags=periodic_x_tags())
    for _ in range(refines):
        mesh = uniform_refine(mesh)
    return build_space(mesh, ip="h1_full")


class TestBurgersStep:
    def test_zero_stays_zero(self):
        space = _burgers_space(0)
        z = FeFunction(space, np.zeros(space.n_dof))
        u1 = burgers_fom_step(space, z, space, tau=0.005, nu=0.001)
        assert np.all(u1.coeffs == 0.0)

    def test_one_step_energy_decay(self):
        space = _burgers_space(1)
        m = assemble(space, "mass")
        u0 = FeFunction(space, solve_linear(
            m, assemble_load(space, _initial_profile)))
        u1 = burgers_fom_step(space, u0, space, tau=0.01, nu=1.0)
        n0 = math.sqrt(u0.coeffs @ (m @ u0.coeffs))
        n1 = math.sqrt(u1.coeffs @ (m @ u1.coeffs))
        assert n1 <= n0 + 1e-10

    def test_newton_iterations_logged_at_reference_parameters(self, caplog):
        space = _burgers_space(2)
        m = assemble(space, "mass")
        u0 = FeFunction(space, solve_linear(
            m, assemble_load(space, _initial_profile)))
        with caplog.at_level(logging.DEBUG, logger="adapod.fem"):
            burgers_fom_step(space, u0, space, tau=0.005, nu=0.001)
        msgs = [r.message for r in caplog.records if "newton" in r.message]
        assert msgs, "expected a newton convergence log record"

    def test_nonconvergence_raises_with_residual(self):
        space = _burgers_space(0)
        m = assemble(space, "mass")
        u0 = FeFunction(space, solve_linear(
            m, assemble_load(space, _initial_profile)))
        with pytest.raises(NewtonError) as err:
            burgers_fom_step(space, u0, space, tau=0.005, nu=0.001,
                             max_newton=0)
        assert err.value.residual is not None


class TestFunctionIO:
    def test_round_trip(self, tmp_path):
        space = build_space(new_structured(3, 3))
        rng = np.random.default_rng(9)
        u = FeFunction(space, rng.standard_normal(space.n_dof))
        path = tmp_path / "u.fun"
        save_function(u, path)
        v = load_function(path, space)
        assert np.array_equal(u.coeffs, v.coeffs)

    def test_space_hash_mismatch(self, tmp_path):
        space = build_space(new_structured(3, 3))
        other = build_space(new_structured(4, 4))
        u = FeFunction(space, np.zeros(space.n_dof))
        path = tmp_path / "u.fun"
        save_function(u, path)
        with pytest.raises(FormatError, match="different space"):
            load_function(path, other)

    def test_coefficient_length_checked(self):
        space = build_space(new_structured(3, 3))
        with pytest.raises(SpaceError):
            FeFunction(space, np.zeros(space.n_dof + 1))
