from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from fraclap.analysis import estimate_condition
from fraclap.assembly import BilinearParams, assemble_dense, assemble_load, assemble_mass
from fraclap.mesh import build_disk_mesh, build_dof_map, disk_hierarchy
from fraclap.solvers import (DenseOperator, DivergenceError, FactorizationError, IterationLimitError,
                             RUNLOG_HEADER, ShiftedOperator, SolveReport, build_multigrid,
                             contraction_factor, format_runlog, runlog_row, solve_cg, solve_dense,
                             solve_mg)


def spd(n, rng, cond=100.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


@pytest.fixture(scope="module")
def ladder():
    """Dense operators on levels 1..4 of the disk, s = 0.75."""
    s = 0.75
    out = []
    for mesh in disk_hierarchy(4)[1:]:
        dm = build_dof_map(mesh, s)
        out.append((mesh, dm, assemble_dense(mesh, dm, BilinearParams(s))))
    return out


class TestDirect:
    def test_identity(self):
        b = np.arange(4.0)
        assert np.array_equal(solve_dense(np.eye(4), b), b)

    def test_random_spd(self, rng):
        A = spd(10, rng)
        b = rng.standard_normal(10)
        x = solve_dense(A, b)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)

    def test_indefinite(self):
        with pytest.raises(FactorizationError):
            solve_dense(np.diag([1.0, -1.0]), np.ones(2))


class TestCG:
    def test_identity_one_iteration(self):
        x, rep = solve_cg(np.eye(5), np.ones(5))
        assert rep.iterations == 1 and np.allclose(x, 1.0)

    def test_terminates_within_n(self, rng):
        A = spd(20, rng, cond=10.0)
        b = rng.standard_normal(20)
        x, rep = solve_cg(A, b, tol=1e-10)
        assert rep.iterations <= 20
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)
        assert rep.history[0] == 1.0 and rep.history[-1] == rep.finalResidual

    def test_zero_rhs(self):
        x, rep = solve_cg(np.eye(3), np.zeros(3))
        assert rep.iterations == 0 and not x.any()

    def test_iteration_limit(self, rng):
        A = spd(30, rng, cond=1e4)
        with pytest.raises(IterationLimitError) as info:
            solve_cg(A, rng.standard_normal(30), tol=1e-12, max_iter=3)
        assert info.value.report.iterations == 3 and info.value.x.shape == (30,)

    def test_indefinite_detected(self):
        with pytest.raises(DivergenceError):
            solve_cg(np.diag([1.0, -2.0]), np.ones(2))

    def test_bad_tolerance(self):
        with pytest.raises(ValueError):
            solve_cg(np.eye(2), np.ones(2), tol=0.0)

    def test_matches_direct_on_level2(self):
        s = 0.25
        mesh = build_disk_mesh(2)
        dm = build_dof_map(mesh, s)
        A = assemble_dense(mesh, dm, BilinearParams(s))
        b = assemble_load(mesh, dm, 1.0)
        x, _ = solve_cg(A, b, tol=1e-12)
        xd = solve_dense(A, b)
        assert np.linalg.norm(x - xd) <= 1e-8 * np.linalg.norm(xd)

    def test_sparse_and_callable(self, rng):
        A = sp.diags([2.0, 3.0, 4.0]).tocsr()
        b = np.ones(3)
        x1, _ = solve_cg(A, b)
        x2, _ = solve_cg(lambda v: A @ v, b)
        assert np.allclose(x1, [0.5, 1 / 3, 0.25]) and np.allclose(x1, x2)


class TestMultigrid:
    def test_single_level_is_direct(self, ladder):
        mesh, dm, A = ladder[0]
        hier = build_multigrid([(mesh, dm, A)])
        b = np.ones(dm.n)
        x, rep = solve_mg(hier, b)
        assert np.allclose(x, solve_dense(A, b), rtol=1e-12, atol=0)
        assert rep.iterations == 1

    def test_vcycle_contraction(self, ladder):
        hier = build_multigrid(ladder)
        assert contraction_factor(hier) <= 0.5

    def test_matches_cg(self, ladder):
        mesh, dm, A = ladder[-1]
        b = assemble_load(mesh, dm, 1.0)
        hier = build_multigrid(ladder)
        xm, rep = solve_mg(hier, b, tol=1e-10)
        xc, _ = solve_cg(A, b, tol=1e-10)
        assert np.linalg.norm(xm - xc) <= 1e-7 * np.linalg.norm(xc)
        assert rep.iterations < 20

    def test_zero_rhs(self, ladder):
        x, rep = solve_mg(build_multigrid(ladder[:2]), np.zeros(ladder[1][1].n))
        assert rep.iterations == 0 and not x.any()

    def test_shifted_hierarchy(self, ladder):
        lv = [(m, d, ShiftedOperator(assemble_mass(m, d), A, 0.01)) for m, d, A in ladder]
        hier = build_multigrid(lv)
        mesh, dm, _ = ladder[-1]
        b = assemble_load(mesh, dm, 1.0)
        x, _ = solve_mg(hier, b, tol=1e-9)
        assert np.linalg.norm(lv[-1][2] @ x - b) <= 1e-9 * np.linalg.norm(b)

    def test_not_nested(self, ladder):
        with pytest.raises(ValueError):
            build_multigrid([ladder[0], ladder[2]])

    def test_shape_mismatch(self, ladder):
        mesh, dm, _ = ladder[0]
        with pytest.raises(ValueError):
            build_multigrid([(mesh, dm, np.eye(dm.n + 1))])

    def test_indefinite_coarse(self, ladder):
        mesh, dm, A = ladder[0]
        hier = build_multigrid([(mesh, dm, -A)])
        with pytest.raises(FactorizationError):
            solve_mg(hier, np.ones(dm.n))


class TestShiftedConditioning:
    def test_kappa_bounds(self, ladder):
        # extreme eigenvalues add up at worst, so the shifted condition number
        # sits below (Lmax(M) + dt Lmax(A)) / (Lmin(M) + dt Lmin(A)), which in
        # turn cannot exceed the larger of the two condition numbers
        mesh, dm, A = ladder[-2]
        M = assemble_mass(mesh, dm)
        em = np.linalg.eigvalsh(M.toarray())
        ea = np.linalg.eigvalsh(A)
        kappas = []
        for dt in (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0):
            op = ShiftedOperator(M, A, dt)
            _, _, k = estimate_condition(op.matvec, dm.n)
            assert k == pytest.approx(np.linalg.cond(op.to_dense()), rel=1e-4)
            bound = (em[-1] + dt * ea[-1]) / (em[0] + dt * ea[0])
            assert k <= bound * (1 + 1e-8)
            assert bound <= max(em[-1] / em[0], ea[-1] / ea[0]) * (1 + 1e-12)
            kappas.append(k)
        # small steps are mass dominated, large steps stiffness dominated
        assert kappas[0] == pytest.approx(em[-1] / em[0], rel=0.2)
        assert kappas[-1] > kappas[-2] > kappas[-3]

    def test_negative_dt(self):
        with pytest.raises(ValueError):
            ShiftedOperator(sp.eye(2), np.eye(2), -1.0)


def test_runlog_format():
    rows = [runlog_row("cg", 3, 0.25, 0.01, SolveReport(12, 3.2e-9, 0.0123))]
    text = format_runlog(rows)
    head, line = text.splitlines()
    assert head == ",".join(RUNLOG_HEADER)
    assert line == "cg,3,0.25,0.01,12,3.200e-09,0.0123"


def test_dense_operator_rejects_rectangular():
    with pytest.raises(ValueError):
        DenseOperator(np.zeros((2, 3)))
