from __future__ import annotations

import math

import numpy as np
import pytest

from fraclap.analysis import (ConvergenceSeries, EstimationError, SeriesRow, error_energy, error_l2,
                              estimate_condition, fit_rate, fit_slope, galerkin_energy_error,
                              getoor_energy_squared, getoor_solution)
from fraclap.assembly import BilinearParams, assemble_dense, assemble_load
from fraclap.mesh import build_disk_mesh, build_dof_map, disk_hierarchy
from fraclap.solvers import solve_dense


class TestGetoor:
    def test_vanishes_on_and_outside_boundary(self):
        x = np.array([[1.0, 0.0], [0.0, -1.0], [2.0, 2.0]])
        assert np.all(getoor_solution(x, 0.3) == 0.0)

    def test_centre_values(self):
        assert getoor_solution([0.0, 0.0], 0.5) == pytest.approx(2 / math.pi, rel=1e-13)
        assert getoor_solution([0.0, 0.0], 1 - 1e-9) == pytest.approx(0.25, rel=1e-7)

    def test_radial(self):
        s = 0.4
        r = 0.6
        pts = r * np.column_stack([np.cos([0, 1, 2]), np.sin([0, 1, 2])])
        vals = getoor_solution(pts, s)
        assert np.allclose(vals, vals[0], rtol=1e-14)
        assert vals[0] == pytest.approx(getoor_solution([0, 0], s) * (1 - r * r) ** s)

    def test_order_range(self):
        with pytest.raises(ValueError):
            getoor_solution([0, 0], 1.0)

    def test_energy_identity(self):
        # pi C / (s + 1) = int C (1 - r^2)^s over the disk
        s = 0.3
        r = np.linspace(0, 1, 200001)
        f = getoor_solution(np.column_stack([r, 0 * r]), s) * 2 * math.pi * r
        assert np.trapezoid(f, r) == pytest.approx(getoor_energy_squared(s), rel=1e-6)


class TestNorms:
    def test_l2_of_constant(self):
        mesh = build_disk_mesh(3)
        dm = build_dof_map(mesh, 0.75)
        err = error_l2(lambda x: np.ones(len(x)), np.zeros(dm.n), mesh, dm)
        assert err == pytest.approx(math.sqrt(mesh.areas.sum()), rel=1e-13)

    def test_l2_of_own_interpolant(self):
        mesh = build_disk_mesh(2)
        dm = build_dof_map(mesh, 0.25)
        xy = mesh.vertices[dm.vertex_of_dof]
        u = 2 * xy[:, 0] - xy[:, 1] + 0.5
        err = error_l2(lambda x: 2 * x[:, 0] - x[:, 1] + 0.5, u, mesh, dm)
        assert err < 1e-13

    def test_l2_quadrature_stable_under_order_doubling(self):
        s = 0.5
        mesh = build_disk_mesh(3)
        dm = build_dof_map(mesh, s)
        A = assemble_dense(mesh, dm, BilinearParams(s))
        uh = solve_dense(A, assemble_load(mesh, dm, 1.0))
        e6 = error_l2(lambda x: getoor_solution(x, s), uh, mesh, dm, order=6)
        e12 = error_l2(lambda x: getoor_solution(x, s), uh, mesh, dm, order=12)
        assert abs(e6 - e12) <= 0.05 * e12

    def test_energy_triangle_inequality(self, rng):
        mesh = build_disk_mesh(2)
        dm = build_dof_map(mesh, 0.25)
        A = assemble_dense(mesh, dm, BilinearParams(0.25))
        a, b, c = rng.standard_normal((3, dm.n))
        zero = np.zeros(dm.n)
        ab, bc, ac = (error_energy(x, y, None, A) for x, y in ((a, b), (b, c), (a, c)))
        assert ac <= ab + bc + 1e-12
        assert error_energy(a, zero, None, A) == pytest.approx(math.sqrt(a @ A @ a))
        assert error_energy(a, a, None, A) == 0.0

    def test_galerkin_energy_monotone(self):
        # nested spaces: a(u_h, u_h) increases towards a(u, u), so the
        # energy error decreases
        s = 0.25
        energies, errors = [], []
        for mesh in disk_hierarchy(3)[1:]:
            dm = build_dof_map(mesh, s)
            A = assemble_dense(mesh, dm, BilinearParams(s))
            b = assemble_load(mesh, dm, 1.0)
            uh = solve_dense(A, b)
            energies.append(uh @ A @ uh)
            errors.append(galerkin_energy_error(A, uh, b, s))
        assert np.all(np.diff(energies) > 0) and energies[-1] < getoor_energy_squared(s)
        assert np.all(np.diff(errors) < 0)


class TestFits:
    def test_exact_powers(self):
        h = np.array([0.5, 0.25, 0.125, 0.0625])
        assert fit_slope(h, 3 * h ** 1.5) == pytest.approx(1.5, abs=1e-12)
        assert fit_slope(h, h ** -2.0) == pytest.approx(-2.0, abs=1e-12)

    def test_noisy_half(self, rng):
        h = 2.0 ** -np.arange(1, 9)
        y = h ** 0.5 * np.exp(rng.normal(0, 0.02, h.size))
        assert fit_slope(h, y) == pytest.approx(0.5, abs=0.05)

    def test_guards(self):
        with pytest.raises(ValueError):
            fit_slope([1, 0.5], [1, 0.5])
        with pytest.raises(ValueError):
            fit_slope([1, 0.5, 0.25], [1, 0, 1])


class TestCondition:
    def test_identity(self):
        lmax, lmin, k = estimate_condition(lambda v: v, 10)
        assert k == pytest.approx(1.0, abs=1e-12)

    def test_diagonal(self):
        d = np.array([1.0, 10.0])
        lmax, lmin, k = estimate_condition(lambda v: d * v, 2)
        assert (lmax, lmin, k) == pytest.approx((10.0, 1.0, 10.0), rel=1e-12)

    def test_against_eigvalsh(self, rng):
        Q, _ = np.linalg.qr(rng.standard_normal((60, 60)))
        A = (Q * np.linspace(0.5, 40.0, 60)) @ Q.T
        _, _, k = estimate_condition(lambda v: A @ v, 60)
        assert k == pytest.approx(80.0, rel=1e-6)

    def test_indefinite(self):
        d = np.array([-1.0, 2.0, 3.0])
        with pytest.raises(EstimationError):
            estimate_condition(lambda v: d * v, 3)


class TestSeries:
    def rows(self):
        return [SeriesRow(L, 2.0 ** -L, 4 ** L, 0.1 * 2.0 ** -L, 0.3 * 2.0 ** (-L / 2), 0.5, 0.1, 16 ** L)
                for L in (1, 2, 3)]

    def test_round_trip(self):
        ser = ConvergenceSeries()
        for r in self.rows():
            ser.append(r)
        back = ConvergenceSeries.from_csv(ser.to_csv())
        # ten significant digits survive the text form
        for a, b in zip(back.rows, ser.rows):
            assert (a.level, a.n, a.stored_reals) == (b.level, b.n, b.stored_reals)
            assert a.errEnergy == pytest.approx(b.errEnergy, rel=1e-9)
        assert fit_rate(back, "errL2") == pytest.approx(1.0)
        assert fit_rate(back, "errEnergy") == pytest.approx(0.5)

    def test_h_must_decrease(self):
        ser = ConvergenceSeries()
        r = self.rows()
        ser.append(r[1])
        with pytest.raises(ValueError):
            ser.append(r[0])

    def test_bad_header(self):
        with pytest.raises(ValueError):
            ConvergenceSeries.from_csv("level,h\n1,0.5\n")
