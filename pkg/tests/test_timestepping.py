from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.sparse as sp

from fraclap.assembly import BilinearParams, assemble_dense, assemble_load, assemble_mass
from fraclap.mesh import build_disk_mesh, build_dof_map
from fraclap.timestepping import (KOTO, KOTO_AS_PRINTED, SNAPSHOT_HEADER, SPOT, STRIPE,
                                  BrusselatorParams, Field, ShiftedSystem, brusselator_rhs,
                                  choose_timestep, dahlquist_error, format_snapshot, radial_profile,
                                  random_initial, reaction_terms, ring_radius, step_backward_euler,
                                  step_imex, timestep_exponent)


def observed_order(err_of_dt, dt0=0.02, halvings=4):
    dts = dt0 / 2.0 ** np.arange(halvings + 1)
    errs = np.array([err_of_dt(dt) for dt in dts])
    return float(np.polyfit(np.log(dts), np.log(errs), 1)[0])


class TestTableau:
    def test_weights(self):
        assert np.array_equal(KOTO.implicit_weights, [0, -1, 1, 1])
        assert np.array_equal(KOTO.explicit_weights, [0, 0, 1, 0])
        assert KOTO.implicit_weights.sum() == 1 and KOTO.explicit_weights.sum() == 1
        assert KOTO.stiffly_accurate()

    def test_consistency(self):
        assert KOTO.consistency_defect() == 0.0
        assert KOTO_AS_PRINTED.consistency_defect() == pytest.approx(0.5)

    def test_dahlquist_order(self):
        p = observed_order(lambda dt: dahlquist_error(-2.0, 1.0, dt))
        assert p == pytest.approx(2.0, abs=0.1)

    def test_printed_variant_first_order(self):
        p = observed_order(lambda dt: dahlquist_error(-2.0, 1.0, dt, tableau=KOTO_AS_PRINTED))
        assert p == pytest.approx(1.0, abs=0.1)

    def test_stiff_implicit_part_is_damped(self):
        # L-stable implicit part: huge negative lam_i does not blow up
        assert dahlquist_error(-1e8, 0.0, 0.1) < 1e-6


class TestTimestepChoice:
    @pytest.mark.parametrize("s,order,target,expo", [
        (0.25, 2, "L2", 3 / 8), (0.75, 2, "L2", 1 / 2), (0.75, 1, "L2", 1.0),
        (0.25, 2, "energy", 1 / 4)])
    def test_exponents(self, s, order, target, expo):
        assert timestep_exponent(s, order, target) == pytest.approx(expo)
        assert choose_timestep(0.01, s, order, target) == pytest.approx(0.01 ** expo)

    def test_guards(self):
        with pytest.raises(ValueError):
            choose_timestep(0.0, 0.5, 2)
        with pytest.raises(ValueError):
            timestep_exponent(0.5, 2, "H1")


@pytest.fixture(scope="module")
def heat2():
    s = 0.5
    mesh = build_disk_mesh(2)
    dm = build_dof_map(mesh, s)
    return mesh, dm, assemble_mass(mesh, dm), assemble_dense(mesh, dm, BilinearParams(s))


class TestBackwardEuler:
    def test_trivial_cases(self, heat2):
        mesh, dm, M, A = heat2
        u0 = np.linspace(0, 1, dm.n)
        assert np.allclose(step_backward_euler(M, np.zeros_like(A), 0.1, u0), u0, atol=1e-13)
        zero = step_backward_euler(M, A, 0.1, np.zeros(dm.n))
        assert not np.any(zero)

    def test_scalar(self):
        M, A = sp.csr_matrix([[2.0]]), np.array([[3.0]])
        u = step_backward_euler(M, A, 0.5, np.array([1.0]), f_next=np.array([4.0]))
        assert u[0] == pytest.approx((2.0 + 0.5 * 4.0) / (2.0 + 1.5))

    def test_heat_energy_decreases(self, heat2):
        mesh, dm, M, A = heat2
        u = np.random.default_rng(3).standard_normal(dm.n)
        sysm = ShiftedSystem(M, A)
        norms = []
        for _ in range(5):
            u = step_backward_euler(M, A, 0.05, u, system=sysm)
            norms.append(u @ (M @ u))
        assert np.all(np.diff(norms) < 0)

    def test_bad_dt(self, heat2):
        _, _, M, A = heat2
        with pytest.raises(ValueError):
            step_backward_euler(M, A, 0.0, np.zeros(A.shape[0]))

    @pytest.mark.parametrize("method", ["cg", "mg_missing"])
    def test_iterative_systems(self, heat2, method):
        mesh, dm, M, A = heat2
        if method == "mg_missing":
            with pytest.raises(ValueError):
                ShiftedSystem(M, A, "mg")
            return
        b = assemble_load(mesh, dm, 1.0)
        x = ShiftedSystem(M, A, "cg", tol=1e-12).solve(0.1, b)
        y = ShiftedSystem(M, A).solve(0.1, b)
        assert np.allclose(x, y, rtol=1e-9, atol=1e-12)


def test_imex_heat_second_order(heat2):
    # M u' = -A u + M u / 2 with the second term explicit; reference by
    # the matrix exponential of the generalised eigenproblem
    from scipy.linalg import eigh
    mesh, dm, M, A = heat2
    Md = M.toarray()
    lam, V = eigh(A, Md)
    u0 = np.random.default_rng(0).standard_normal(dm.n)
    T = 0.2
    exact = V @ (np.exp((-lam + 0.5) * T) * (V.T @ (Md @ u0)))
    fld = [Field(ShiftedSystem(M, A))]

    def err(dt):
        u = [u0.copy()]
        for k in range(int(round(T / dt))):
            u = step_imex(fld, dt, k * dt, u, lambda t, U: [0.5 * (M @ U[0])])
        return np.linalg.norm(u[0] - exact)
    # halving ratios are 3.4, 3.6 above dt = 0.005 and approach 4 only below it
    assert observed_order(err, dt0=0.005, halvings=3) == pytest.approx(2.0, abs=0.1)


class TestBrusselator:
    def test_zero_state(self):
        p = BrusselatorParams(**SPOT)
        ru, rv = brusselator_rhs(np.zeros(3), np.zeros(3), p)
        assert not ru.any() and not rv.any()

    def test_sum_identity(self, rng):
        # the two reactions add to -u
        p = BrusselatorParams(**STRIPE)
        u, v = rng.standard_normal((2, 50))
        ru, rv = reaction_terms(u, v, p)
        assert np.allclose(ru + rv, -u, atol=1e-12)
        _, rv_scaled = brusselator_rhs(u, v, p)
        assert np.allclose(rv_scaled, rv / p.etaB ** 2)

    def test_parameters(self):
        assert SPOT == dict(etaB=0.2, B=1.22, Q=0.1)
        assert STRIPE == dict(etaB=0.2, B=6.26, Q=2.5)
        with pytest.raises(ValueError):
            BrusselatorParams(etaB=0.2, B=1.0, Q=0.1, alpha=1.0)
        with pytest.raises(ValueError):
            BrusselatorParams(etaB=0.0, B=1.0, Q=0.1)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            brusselator_rhs(np.zeros(2), np.zeros(3), BrusselatorParams(**SPOT))

    @staticmethod
    def dispersion(p, K):
        # determinant of the linearisation at mode K (same order for u and v)
        return K ** 2 + (p.Q ** 2 + 1 - p.B) * K + p.Q ** 2

    def test_linear_stability(self):
        K = np.linspace(0, 50, 50001)
        spot, stripe = BrusselatorParams(**SPOT), BrusselatorParams(**STRIPE)
        for p in (spot, stripe):
            assert p.B - 1 - p.Q ** 2 / p.etaB ** 2 < 0  # homogeneous state stable
        assert self.dispersion(spot, K).min() < 0
        assert self.dispersion(stripe, K).min() > 0
        assert (1 + stripe.Q) ** 2 > stripe.B

    def test_random_initial(self):
        x = random_initial(1000, seed=7)
        assert x.min() >= -0.1 and x.max() <= 0.1
        assert np.array_equal(x, random_initial(1000, seed=7))


class TestOutput:
    def test_snapshot_format(self):
        text = format_snapshot(np.array([3, 5]), np.array([[0.0, 0.5], [1.0, 0.0]]),
                               np.array([0.1, 0.2]), np.array([-1.0, 2.0]))
        lines = text.splitlines()
        assert lines[0] == ",".join(SNAPSHOT_HEADER)
        assert lines[1] == "3,0,0.5,0.1,-1"

    def test_ring_radius(self):
        r = np.linspace(0.0, 0.99, 400)
        th = np.linspace(0, 40 * math.pi, 400)
        xy = np.column_stack([r * np.cos(th), r * np.sin(th)])
        u = np.exp(-((r - 0.6) / 0.05) ** 2)
        assert ring_radius(xy, u) == pytest.approx(0.625)
        centres, mean = radial_profile(xy, np.ones(400))
        assert np.allclose(mean, 1.0) and centres[0] == pytest.approx(0.025)
