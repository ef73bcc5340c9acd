import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hpmg.basis import lgl_nodes
from hpmg.errors import (
    CannotCoarsenError,
    ConfigurationError,
    InvalidMeshError,
    InvalidOrderError,
)
from hpmg.mesh import (
    build_mesh,
    coarsen_mesh,
    coefficient_field,
    get_problem,
    get_warp,
    mesh_for_problem,
    reduce_order_mesh,
)

dims = st.sampled_from([2, 3])
small_nelem = st.sampled_from([2, 4])
small_order = st.integers(1, 4)


def _element_ref_coords(mesh):
    """Reference coordinates of element-local nodes, built independently."""
    xi = (lgl_nodes(mesh.order) + 1) / 2 / mesh.nelem
    local = np.array(list(itertools.product(*([xi] * mesh.dim))))[:, ::-1]  # x fastest
    return mesh.element_origin()[:, None, :] + local[None]


class TestBuild:
    def test_tiny_2d(self):
        m = build_mesh(2, 2, 1)
        assert m.n_dofs == 9
        assert m.boundary_mask.sum() == 8
        np.testing.assert_array_equal(m.interior, [4])

    def test_sizes(self):
        assert build_mesh(2, 32, 16).n_dofs == 513**2 == 263169
        assert build_mesh(3, 8, 2).n_dofs == 17**3 == 4913

    @pytest.mark.parametrize("nelem", [3, 6, 1, 0])
    def test_bad_nelem(self, nelem):
        with pytest.raises(InvalidMeshError):
            build_mesh(2, nelem, 1)

    @pytest.mark.parametrize("order", [0, 17])
    def test_bad_order(self, order):
        with pytest.raises(InvalidOrderError):
            build_mesh(2, 2, order)

    def test_bad_warp(self):
        with pytest.raises(ConfigurationError):
            build_mesh(2, 2, 1, "nope")
        with pytest.raises(ConfigurationError):
            build_mesh(2, 2, 1, "warp-3d")

    @given(dims, small_nelem, small_order)
    def test_boundary_count(self, dim, nelem, order):
        m = build_mesh(dim, nelem, order)
        n = nelem * order
        assert m.boundary_mask.sum() == (n + 1) ** dim - (n - 1) ** dim

    @given(dims, small_nelem, small_order)
    def test_conformity(self, dim, nelem, order):
        # every (element, local node) pair maps to the lattice point at its coordinates
        m = build_mesh(dim, nelem, order, f"warp-{dim}d")
        ref = m.reference_coords()
        np.testing.assert_allclose(ref[m.elem_to_dof], _element_ref_coords(m), atol=1e-14)

    def test_lexicographic_x_fastest(self):
        m = build_mesh(2, 2, 2)
        ref = m.reference_coords()
        assert ref[1, 0] > ref[0, 0] and ref[1, 1] == ref[0, 1]
        assert ref[m.n1d, 1] > ref[0, 1] and ref[m.n1d, 0] == ref[0, 0]

    @given(dims, small_nelem, small_order)
    def test_multiplicity(self, dim, nelem, order):
        m = build_mesh(dim, nelem, order)
        mult = np.bincount(m.elem_to_dof.ravel(), minlength=m.n_dofs)
        # multiplicity factorizes per axis: 2 on shared element-boundary planes, else 1
        per_axis = np.ones(m.n1d, dtype=int)
        per_axis[order:-1:order] = 2
        expect = per_axis
        for _ in range(dim - 1):
            expect = np.multiply.outer(per_axis, expect).ravel()
        np.testing.assert_array_equal(mult, expect)
        assert mult.sum() == m.n_elements * m.nodes_per_element

    @pytest.mark.parametrize("dim", [2, 3])
    def test_warp_jacobian_positive(self, dim):
        for nelem, order in [(2, 16), (8, 8), (32, 1)] if dim == 2 else [(2, 16), (8, 4)]:
            m = build_mesh(dim, nelem, order, f"warp-{dim}d")
            det = np.linalg.det(m.warp.jacobian(m.quadrature_points()))
            assert det.min() > 0

    @pytest.mark.parametrize("dim", [2, 3])
    def test_warp_jacobian_matches_finite_differences(self, dim):
        w = get_warp(f"warp-{dim}d")
        x = np.random.default_rng(0).uniform(0.1, 0.9, (5, dim))
        J = w.jacobian(x)
        h = 1e-6
        for k in range(dim):
            e = np.zeros(dim)
            e[k] = h
            fd = (w.map(x + e) - w.map(x - e)) / (2 * h)
            np.testing.assert_allclose(J[..., :, k], fd, atol=1e-8)

    def test_warp_fixes_boundary(self):
        m = build_mesh(2, 4, 2, "warp-2d")
        x = m.node_coords()[m.boundary_mask]
        on_edge = np.isclose(x, 0, atol=1e-14) | np.isclose(x, 1, atol=1e-14)
        assert on_edge.any(axis=1).all()


class TestCoefficients:
    def test_const(self):
        mu = coefficient_field("2d-const")
        np.testing.assert_array_equal(mu(np.random.default_rng(0).random((4, 2))), 1.0)

    def test_var_values(self):
        mu = coefficient_field("2d-var")
        assert mu(np.array([0.0, 0.0])) == 1 + 2e6
        assert mu(np.array([0.25, 0.25])) == pytest.approx(1.0, abs=1e-9)
        assert coefficient_field("3d-var")(np.zeros(3)) == 1 + 3e6
        assert coefficient_field("2d-var'")(np.array([0.05, 0.05])) == pytest.approx(1.0, abs=1e-9)

    @given(st.sampled_from(["2d-const", "2d-var", "2d-var'", "3d-const", "3d-var"]),
           st.integers(0, 1000))
    def test_bounded_below(self, pid, seed):
        prob = get_problem(pid)
        x = np.random.default_rng(seed).random((50, prob.dim))
        assert np.all(coefficient_field(pid)(x) >= 1.0)

    def test_unknown(self):
        with pytest.raises(ConfigurationError):
            coefficient_field("4d-var")
        with pytest.raises(ConfigurationError):
            get_problem("nope")

    def test_prime_alias(self):
        assert get_problem("2d-var′").id == "2d-var'"


class TestCoarsening:
    def test_h(self):
        m = coarsen_mesh(build_mesh(2, 32, 4))
        assert (m.nelem, m.order) == (16, 4)
        c = coarsen_mesh(build_mesh(2, 2, 1))
        assert c.n_dofs == 4
        with pytest.raises(CannotCoarsenError):
            coarsen_mesh(c)
        m3 = coarsen_mesh(coarsen_mesh(build_mesh(3, 8, 1)))
        assert m3.nelem == 2

    def test_p(self):
        m = reduce_order_mesh(build_mesh(2, 32, 16))
        assert (m.nelem, m.order) == (32, 8)
        assert reduce_order_mesh(build_mesh(2, 2, 2)).order == 1
        with pytest.raises(CannotCoarsenError):
            reduce_order_mesh(build_mesh(2, 2, 3))

    @given(dims, st.sampled_from([2, 4, 8]), st.sampled_from([1, 2, 4]))
    def test_coarse_vertices_are_fine_nodes(self, dim, nelem, order):
        # element vertices nest for every order; at p=1 these are all nodes
        fine = build_mesh(dim, nelem, order)
        for coarse in [coarsen_mesh(fine)] + ([reduce_order_mesh(fine)] if order > 1 else []):
            cf = coarse.ref_lattice[:: coarse.order]
            ff = fine.ref_lattice
            assert np.all(np.min(np.abs(cf[:, None] - ff[None, :]), axis=1) < 1e-14)
            if order == 1:
                assert cf.size == coarse.ref_lattice.size

    def test_problem_mesh(self):
        m = mesh_for_problem("3d-var", 2, 2)
        assert m.dim == 3 and m.warp.id == "warp-3d"
