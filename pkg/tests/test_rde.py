import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roughflow._fit import fit_order
from roughflow.controlled import controlled_norm
from roughflow.fields import make_drift, make_sigma
from roughflow.rde import (
    RdeProblem, SolverError, apply_psi, ball_elements, check_integration_by_parts,
    check_rough_ito, check_schauder_ball, euler_davie_step, kappa, lift_solution, solve,
    solve_euler, solve_picard,
)
from roughflow.rough_lift import GEOMETRIC, ITO, check_chen, lift_ito_from_geometric

from conftest import ladder


def smooth_problem(rp, x0=0.3):
    return RdeProblem([x0], make_drift("cos"), make_sigma("two_plus_sin"), rp)


def unit_problem(rp, x0=0.0):
    return RdeProblem(np.full(rp.dim, x0), make_drift("zero"), make_sigma("identity", dim=rp.dim), rp)


class TestProblem:
    def test_x0_shape(self, bm_lift):
        with pytest.raises(ValueError):
            RdeProblem([0.0], make_drift("zero"), make_sigma("identity", dim=2), bm_lift)

    def test_assumptions(self, bm_lift_1d):
        rep = smooth_problem(bm_lift_1d).check_assumptions(np.linspace(-5, 5, 101)[:, None])
        assert rep["elliptic"]
        assert rep["min_sym_eigenvalue"] == pytest.approx(1.0, abs=1e-3)
        assert rep["sup_f"] <= 1.0


class TestEulerStep:
    def test_unit_sigma(self):
        x = euler_davie_step([1.0, 2.0], make_drift("zero"), make_sigma("identity", dim=2),
                             np.array([0.1, -0.2]), np.ones((2, 2)), 0.01)
        assert np.allclose(x, [1.1, 1.8], rtol=0, atol=1e-15)

    @given(st.floats(-1, 1), st.floats(0.001, 0.1))
    def test_exponential_second_order(self, db, h):
        # sigma(x) = x from x = 1: one step is 1 + dB + dB^2 / 2
        x = euler_davie_step([1.0], make_drift("zero"), make_sigma("linear"),
                             np.array([db]), np.array([[0.5 * db * db]]), h)
        assert x[0] == pytest.approx(1 + db + 0.5 * db * db, rel=1e-14, abs=1e-15)

    def test_drift_term(self):
        x = euler_davie_step([0.0], make_drift("constant", c=3.0), make_sigma("constant", c=2.0),
                             np.array([0.5]), np.array([[0.125]]), 0.1)
        assert x[0] == pytest.approx(0.3 + 1.0, abs=1e-15)


class TestSolvers:
    def test_affine_exact(self, bm_lift_1d):
        prob = RdeProblem([0.5], make_drift("constant", c=-1.0), make_sigma("constant", c=2.0), bm_lift_1d)
        sol = solve_euler(prob)
        t = bm_lift_1d.grid.points
        expected = 0.5 - t + 2 * bm_lift_1d.base.values[:, 0]
        assert np.allclose(sol.X.values[:, 0], expected, rtol=0, atol=1e-12)
        assert np.all(sol.Xprime == 2.0)

    def test_exponential_converges(self):
        steps = [64, 256, 1024, 4096]
        errs = []
        for rp in ladder(13, steps, oversample=2):
            prob = RdeProblem([1.0], make_drift("zero"), make_sigma("linear"), rp)
            x = solve_euler(prob).X.values[:, 0]
            errs.append(np.abs(x - np.exp(rp.base.values[:, 0])).max())
        assert errs[-1] < 1e-2
        assert fit_order(1 / np.array(steps, float), errs).slope >= 2 * 0.45 - 0.25

    def test_blow_up(self):
        (rp,) = ladder(0, [64])
        prob = RdeProblem([1.0], make_drift("linear", a=100.0), make_sigma("constant", c=1.0), rp)
        with pytest.raises(SolverError):
            solve_euler(prob)

    def test_unknown_solver(self, bm_lift_1d):
        with pytest.raises(ValueError):
            solve(smooth_problem(bm_lift_1d), solver="runge-kutta")

    def test_dispatch(self, bm_lift_1d):
        prob = smooth_problem(bm_lift_1d)
        assert solve(prob).solver == "euler"
        assert solve(prob, "picard", tol=1e-9).solver == "picard"


class TestPicard:
    def test_psi_with_unit_sigma_is_shifted_noise(self, bm_lift):
        prob = unit_problem(bm_lift, 0.5)
        cp = kappa(prob).scale(3.0)
        out = apply_psi(cp, prob)
        assert np.allclose(out.values, 0.5 + bm_lift.base.values, rtol=0, atol=1e-14)
        assert np.allclose(out.derivative, np.eye(2))

    def test_unit_sigma_converges_in_one_iteration(self, bm_lift):
        sol = solve_picard(unit_problem(bm_lift))
        assert sol.iterations == 1 and sol.converged
        assert sol.residual <= 1e-14

    def test_smooth_problem_iteration_count(self):
        (rp,) = ladder(42, [512], oversample=8)
        sol = solve_picard(smooth_problem(rp), tol=1e-10)
        assert sol.converged and sol.iterations <= 30

    def test_agrees_with_euler(self):
        steps = [128, 512, 2048]
        dists = []
        for rp in ladder(1, steps, oversample=4):
            prob = smooth_problem(rp)
            dists.append(np.abs(solve_euler(prob).X.values - solve_picard(prob, tol=1e-12).X.values).max())
        assert dists[-1] < 0.05
        assert fit_order(1 / np.array(steps, float), dists).slope >= 2 * 0.45 - 0.25

    def test_euler_solution_is_near_fixed_point(self, bm_lift_1d):
        prob = smooth_problem(bm_lift_1d)
        sol = solve_euler(prob)
        image = apply_psi(sol.controlled(bm_lift_1d), prob)
        assert np.abs(image.values - sol.X.values).max() < 0.05

    def test_non_convergence_warns(self, bm_lift_1d):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            sol = solve_picard(smooth_problem(bm_lift_1d), max_iter=2)
        assert not sol.converged
        assert any(issubclass(w.category, RuntimeWarning) for w in caught)

    def test_rejects_tolerance(self, bm_lift_1d):
        with pytest.raises(ValueError):
            solve_picard(smooth_problem(bm_lift_1d), tol=0.0)


class TestSchauderBall:
    def _problem(self):
        (rp,) = ladder(42, [512], oversample=4)
        return RdeProblem([0.3], make_drift("cos", a=0.5), make_sigma("shifted_sin", c=1.0, a=0.1), rp)

    def test_elements_lie_in_ball(self):
        prob = self._problem()
        small = prob.with_noise(prob.noise.restrict(26))
        centre = kappa(small)
        for y in ball_elements(small, 0.4, count=5):
            assert np.allclose(y.values[0], small.x0)
            assert np.allclose(y.derivative[0], centre.derivative[0])
            assert controlled_norm(y + centre.scale(-1.0), 0.4).total <= 0.95 + 1e-12

    def test_margin_positive_and_growing_as_horizon_shrinks(self):
        prob = self._problem()
        small = prob.with_noise(prob.noise.restrict(26))
        elements = ball_elements(small, 0.4, count=5)
        margins = [check_schauder_ball(prob, 0.4, 0.05 / 2**k, elements=elements).margin for k in range(3)]
        assert margins[0] > 0
        assert margins[0] <= margins[1] <= margins[2]

    def test_horizon_range(self):
        with pytest.raises(ValueError):
            check_schauder_ball(self._problem(), 0.4, 1e-4)


class TestSolutionLift:
    def test_unit_sigma_reproduces_noise_lift(self, bm_lift):
        prob = unit_problem(bm_lift, 1.0)
        lifted = lift_solution(solve_euler(prob), prob)
        assert np.allclose(lifted.level2, bm_lift.level2, rtol=0, atol=1e-12)
        assert lifted.flavor == GEOMETRIC

    def test_chen_and_flavor(self, bm_lift_1d):
        prob = smooth_problem(bm_lift_1d)
        lifted = lift_solution(solve_euler(prob), prob)
        assert check_chen(lifted) <= 1e-10
        ito = lift_ito_from_geometric(bm_lift_1d)
        ito_prob = prob.with_noise(ito)
        assert lift_solution(solve_euler(ito_prob), ito_prob).flavor == ITO


class TestRoughIto:
    def test_identity_integrand(self, bm_lift_1d):
        prob = RdeProblem([0.3], make_drift("zero"), make_sigma("two_plus_sin"), bm_lift_1d)
        F = lambda x: np.broadcast_to(np.eye(1), x.shape + (1,)).copy()
        DF = lambda x: np.zeros(x.shape + (1, 1))
        assert check_rough_ito(F, DF, solve_euler(prob), prob) <= 1e-10

    @given(st.floats(-4, 4).filter(lambda c: abs(c) > 1e-3))
    def test_linear_in_integrand(self, c):
        (rp,) = ladder(4, [64], oversample=4)
        prob = smooth_problem(rp)
        sol = solve_euler(prob)
        lifted = lift_solution(sol, prob)
        F = lambda x: np.sin(x)[..., None]
        DF = lambda x: np.cos(x)[..., None, None]
        base = check_rough_ito(F, DF, sol, prob, lifted)
        scaled = check_rough_ito(lambda x: c * F(x), lambda x: c * DF(x), sol, prob, lifted)
        assert scaled == pytest.approx(abs(c) * base, rel=1e-9)

    def test_residual_shrinks_with_refinement(self):
        steps = [64, 256, 1024]
        errs = []
        for rp in ladder(9, steps, oversample=4):
            prob = smooth_problem(rp)
            sig = prob.sigma
            errs.append(check_rough_ito(lambda x: 1 / sig.sigma(x),
                                        lambda x: -sig.dsigma(x) / sig.sigma(x)[..., None] ** 2,
                                        solve_euler(prob), prob))
        assert errs[-1] < errs[0]


class TestIntegrationByParts:
    def test_linear_exact(self, bm_lift):
        A = np.array([[1.0, -2.0], [0.5, 3.0]])
        err = check_integration_by_parts(
            lambda w: w @ A.T, lambda w: np.broadcast_to(A, w.shape[:-1] + A.shape),
            lambda w: np.zeros(w.shape[:-1] + (2, 2, 2)), bm_lift)
        assert err <= 1e-12

    def test_square_exact_in_one_dimension(self, bm_lift_1d):
        err = check_integration_by_parts(
            lambda w: w**2, lambda w: (2 * w)[..., None], lambda w: np.full(w.shape + (1, 1), 2.0),
            bm_lift_1d)
        assert err <= 1e-10

    def test_sin_converges(self):
        steps = [64, 256, 1024]
        errs = [check_integration_by_parts(np.sin, lambda w: np.cos(w)[..., None],
                                           lambda w: -np.sin(w)[..., None, None], rp)
                for rp in ladder(2, steps, oversample=4)]
        assert errs[-1] < errs[0]

    def test_rejects_ito(self, bm_lift_1d):
        with pytest.raises(ValueError):
            check_integration_by_parts(np.sin, np.cos, np.sin, lift_ito_from_geometric(bm_lift_1d))
