import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from hpmg.errors import (
    AssemblyTooLargeError,
    ConfigurationError,
    ElementTooLargeError,
    RequiresAssemblyError,
    ShapeError,
)
from hpmg.mesh import build_mesh, mesh_for_problem
from hpmg.operator import (
    apply_stiffness,
    assemble_low_order_overlay,
    assemble_mass,
    assemble_stiffness,
    assembled_nnz,
    element_matrices,
    l1_diagonal,
    operator_diagonal,
    stiffness_operator,
)

PROBLEMS = ["2d-const", "2d-var", "2d-var'", "3d-const", "3d-var"]
cases = st.tuples(st.sampled_from(PROBLEMS), st.sampled_from([1, 2, 3, 4]))


def _small(pid, order):
    nelem = 4 if pid.startswith("2d") else 2
    return mesh_for_problem(pid, nelem, order)


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


class TestStiffness:
    @given(cases, st.integers(0, 10_000))
    def test_matrix_free_matches_assembled(self, case, seed):
        mesh = _small(*case)
        op = stiffness_operator(mesh, case[0])
        A = assemble_stiffness(mesh, case[0]).sparse
        u = np.random.default_rng(seed).standard_normal(mesh.n_dofs)
        assert _rel(op.apply_matrix_free(u), A @ u) < 1e-10

    @given(cases, st.integers(0, 10_000))
    def test_symmetric_and_positive(self, case, seed):
        op = stiffness_operator(_small(*case), case[0])
        rng = np.random.default_rng(seed)
        u, v = rng.standard_normal((2, op.n_dofs))
        uAv, vAu = u @ op.apply(v), v @ op.apply(u)
        assert abs(uAv - vAu) <= 1e-10 * max(abs(uAv), 1.0) * np.abs(op.diagonal()).max()
        assert u @ op.apply(u) > 0
        # positive semidefinite without boundary projection
        assert u @ op.apply(u, project_boundary=False) >= -1e-9 * np.abs(u).sum()

    @pytest.mark.parametrize("pid", PROBLEMS)
    def test_constants_in_kernel(self, pid):
        op = stiffness_operator(_small(pid, 3), pid)
        v = op.apply(np.ones(op.n_dofs), project_boundary=False)
        assert np.abs(v).max() < 1e-9 * np.abs(op.diagonal()).max()

    def test_row_sums_zero_before_projection(self):
        A = assemble_stiffness(build_mesh(2, 2, 1), "const-1", project_boundary=False).sparse
        np.testing.assert_allclose(np.asarray(A.sum(axis=1)).ravel(), 0.0, atol=1e-14)

    def test_q1_stencil_width(self):
        mesh = build_mesh(2, 4, 1)
        A = assemble_stiffness(mesh, "const-1").sparse
        A.eliminate_zeros()
        assert np.diff(A.indptr)[mesh.interior].max() <= 9

    def test_single_element_block_dense(self):
        mesh = build_mesh(2, 2, 2)
        A = assemble_stiffness(mesh, "const-1", project_boundary=False).sparse
        # the stored pattern couples all 9 nodes of an element with each other
        pattern = sp.csr_matrix((np.ones(A.nnz), A.indices, A.indptr), shape=A.shape).toarray()
        e = mesh.elem_to_dof[0]
        assert pattern[np.ix_(e, e)].sum() == 81

    def test_assembled_nnz_formula(self):
        for dim, nelem, p in [(2, 4, 1), (2, 2, 3), (3, 2, 2)]:
            A = assemble_stiffness(build_mesh(dim, nelem, p), "const-1", project_boundary=False)
            assert A.sparse.nnz == assembled_nnz(dim, nelem, p)

    def test_shape_error(self):
        op = stiffness_operator(build_mesh(2, 2, 1), "const-1")
        with pytest.raises(ShapeError):
            apply_stiffness(op, np.ones(5))

    def test_budget(self):
        with pytest.raises(AssemblyTooLargeError):
            assemble_stiffness(build_mesh(2, 4, 4), "const-1", budget_bytes=1000)

    def test_deterministic_accumulation(self):
        op = stiffness_operator(_small("3d-var", 3), "3d-var")
        u = np.random.default_rng(1).standard_normal(op.n_dofs)
        assert np.array_equal(op.apply(u), op.apply(u))

    def test_matvec_counter(self):
        op = stiffness_operator(build_mesh(2, 2, 1), "const-1")
        op.apply(np.zeros(op.n_dofs))
        op @ np.zeros(op.n_dofs)
        assert op.matvecs == 2


class TestMass:
    def test_unit_square_measure(self):
        M = assemble_mass(build_mesh(2, 4, 3)).sparse
        one = np.ones(M.shape[0])
        assert one @ M @ one == pytest.approx(1.0, abs=1e-13)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_warped_measure(self, dim):
        mesh = build_mesh(dim, 4, 4, f"warp-{dim}d")
        M = assemble_mass(mesh).sparse
        one = np.ones(M.shape[0])
        # independent oracle: tensor Gauss-Legendre of det J on [0,1]^dim; the
        # tolerance covers the p+1 point rule on the mesh
        x, w = np.polynomial.legendre.leggauss(40)
        x, w = (x + 1) / 2, w / 2
        grids = np.meshgrid(*([x] * dim), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        W = np.prod(np.meshgrid(*([w] * dim), indexing="ij"), axis=0).ravel()
        vol = W @ np.linalg.det(mesh.warp.jacobian(pts))
        assert one @ M @ one == pytest.approx(vol, rel=1e-7)

    def test_spd(self, rng):
        M = assemble_mass(build_mesh(2, 2, 4, "warp-2d")).sparse
        for _ in range(5):
            u = rng.standard_normal(M.shape[0])
            assert u @ M @ u > 0
        assert abs(M - M.T).max() < 1e-14


class TestDiagonals:
    @pytest.mark.parametrize("pid", PROBLEMS)
    def test_diagonal_matches_assembly(self, pid):
        mesh = _small(pid, 2)
        d = operator_diagonal(stiffness_operator(mesh, pid))
        A = assemble_stiffness(mesh, pid).sparse
        np.testing.assert_allclose(d, A.diagonal(), rtol=1e-12)
        assert np.all(d > 0)

    def test_translation_invariance(self):
        mesh = build_mesh(2, 8, 1)
        d = operator_diagonal(stiffness_operator(mesh, "const-1"))
        np.testing.assert_allclose(d[mesh.interior], d[mesh.interior][0], rtol=1e-13)

    def test_l1(self):
        mesh = _small("2d-var", 2)
        op = stiffness_operator(mesh, "2d-var")
        with pytest.raises(RequiresAssemblyError):
            l1_diagonal(op)
        A = op.assemble(switch_mode=False).toarray()
        d1 = l1_diagonal(op)
        expect = np.diag(A) + np.abs(A).sum(axis=1) - np.abs(np.diag(A))
        np.testing.assert_allclose(d1, expect, rtol=1e-13)
        assert np.all(d1 >= np.diag(A))
        assert op.mode == "matrix-free"


class TestElementMatrices:
    def test_bilinear_square(self):
        em = element_matrices(build_mesh(2, 2, 1), "const-1", project_boundary=False)
        K = em[0].matrix
        expect = np.array([[4, -1, -1, -2], [-1, 4, -2, -1], [-1, -2, 4, -1], [-2, -1, -1, 4]]) / 6
        np.testing.assert_allclose(K, expect, atol=1e-14)
        assert np.trace(K) == pytest.approx(8 / 3)

    @pytest.mark.parametrize("pid,order", [("2d-var", 3), ("3d-var", 2), ("2d-const", 1)])
    def test_sum_is_operator(self, pid, order):
        mesh = _small(pid, order)
        em = element_matrices(mesh, pid)
        n = mesh.n_dofs
        S = np.zeros((n, n))
        for e in em:
            idx = mesh.elem_to_dof[e.element]
            S[np.ix_(idx, idx)] += e.matrix
            assert np.abs(e.matrix - e.matrix.T).max() <= 1e-12 * np.abs(e.matrix).max()
            assert np.all(np.diag(e.matrix) > 0)
        A = assemble_stiffness(mesh, pid).sparse.toarray()
        assert np.abs(S - A).max() <= 1e-10 * np.abs(A).max()

    def test_budget(self):
        with pytest.raises(ElementTooLargeError):
            element_matrices(build_mesh(3, 2, 16), "const-1")


class TestOverlay:
    @pytest.mark.parametrize("pid", PROBLEMS)
    def test_structure(self, pid):
        mesh = _small(pid, 4)
        L = assemble_low_order_overlay(mesh, pid)
        assert L.n_dofs == mesh.n_dofs
        A = L.sparse.copy()
        A.eliminate_zeros()
        assert np.diff(A.indptr)[mesh.interior].max() <= 3**mesh.dim
        Lu = assemble_low_order_overlay(mesh, pid, project_boundary=False)
        v = Lu.sparse @ np.ones(mesh.n_dofs)
        assert np.abs(v).max() < 1e-9 * np.abs(Lu.sparse.diagonal()).max()
        assert abs(A - A.T).max() <= 1e-10 * abs(A).max()

    def test_order_one_rejected(self):
        with pytest.raises(ConfigurationError):
            assemble_low_order_overlay(build_mesh(2, 2, 1), "const-1")

    @pytest.mark.parametrize("pid", ["2d-const", "2d-var", "3d-var"])
    def test_spectral_equivalence_bracket(self, pid, rng):
        mesh = _small(pid, 4)
        A = assemble_stiffness(mesh, pid).sparse
        L = assemble_low_order_overlay(mesh, pid).sparse
        for _ in range(20):
            u = rng.standard_normal(mesh.n_dofs)
            q = (u @ A @ u) / (u @ L @ u)
            assert 0.05 <= q <= 20

    def test_q1_overlay_equals_p1_operator(self):
        # on a p=2 mesh the overlay is the p=1 operator on the refined lattice (uniform case)
        mesh = build_mesh(2, 2, 2)
        L = assemble_low_order_overlay(mesh, "const-1").sparse.toarray()
        # LGL nodes for p=2 are equispaced, so this is Q1 on a 4x4 uniform grid
        A1 = assemble_stiffness(build_mesh(2, 4, 1), "const-1").sparse.toarray()
        np.testing.assert_allclose(L, A1, atol=1e-13)
        assert sp.issparse(assemble_low_order_overlay(mesh, "const-1").sparse)
