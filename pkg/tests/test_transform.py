import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roughflow.fields import VectorField, make_drift, make_sigma
from roughflow.rde import RdeProblem, solve_euler
from roughflow.rough_lift import lift_ito_from_geometric
from roughflow.transform import (
    TransformError, build_G, check_conservative, check_ellipticity, growth_margin, invert_G,
    loop_circulation, reduce_drift, solve_unit_sigma, square_loops,
    verify_transform_equivalence,
)

from conftest import ladder


@pytest.fixture(scope="module")
def G_sin():
    return build_G(make_sigma("two_plus_sin"))


@pytest.fixture(scope="module")
def G_2d():
    return build_G(make_sigma("gradient_2d"), dim=2)


def saddle_field():
    """``sigma = diag(1, -1)``: invertible but with an indefinite quadratic form."""
    m = np.diag([1.0, -1.0])
    return VectorField(sigma=lambda x: np.broadcast_to(m, x.shape[:-1] + (2, 2)).copy(),
                       dsigma=lambda x: np.zeros(x.shape[:-1] + (2, 2, 2)),
                       lam=1.0, sup_sigma=1.0, name="saddle")


class TestEllipticity:
    def test_identity(self):
        rep = check_ellipticity(make_sigma("identity", dim=3), np.zeros((4, 3)))
        assert rep.min_quotient == pytest.approx(1.0) and rep.passes

    def test_two_plus_sin(self):
        pts = np.linspace(-2 * np.pi, 2 * np.pi, 401)[:, None]
        rep = check_ellipticity(make_sigma("two_plus_sin"), pts)
        assert rep.passes
        assert rep.min_quotient == pytest.approx(1.0, abs=1e-3)

    def test_mixed_sign_rejected(self):
        rep = check_ellipticity(saddle_field(), np.zeros((3, 2)))
        assert rep.mixed_sign and not rep.passes
        with pytest.raises(TransformError):
            build_G(saddle_field(), dim=2)

    def test_degenerate_field_rejected(self):
        with pytest.raises(TransformError):
            build_G(make_sigma("linear"))

    def test_declared_constant_too_large(self):
        bad = VectorField.from_scalar(lambda x: 2 + np.sin(x), np.cos, lam=1.5, sup_sigma=3.0)
        assert not check_ellipticity(bad, np.linspace(-4, 4, 81)[:, None]).passes

    def test_needs_points(self):
        with pytest.raises(ValueError):
            check_ellipticity(make_sigma("identity"), np.zeros((0, 1)))


class TestCirculation:
    def test_one_dimension_is_trivially_conservative(self):
        rep = check_conservative(make_sigma("two_plus_sin"), dim=1)
        assert rep.passes and rep.max_circulation == 0.0

    def test_gradient_field(self):
        rep = check_conservative(make_sigma("gradient_2d"), dim=2)
        assert rep.passes
        assert rep.max_circulation <= 1e-8

    @pytest.mark.parametrize("centre,side", [((0.0, 0.0), 1.0), ((0.7, -0.4), 0.5), ((-1.3, 2.1), 1.0)])
    def test_green_theorem(self, centre, side):
        # the first row of sigma^-1 is (1, kappa sin x1), whose curl is kappa cos x1
        kappa = 0.5
        (loop,) = square_loops([centre], [side])
        circ = loop_circulation(make_sigma("rotational_2d", kappa=kappa), loop, 8192)
        expected = 2 * kappa * side * np.cos(centre[0]) * np.sin(side / 2)
        assert circ[0] == pytest.approx(expected, abs=1e-7)
        assert abs(circ[1]) <= 1e-12

    def test_rotational_field_rejected(self):
        rep = check_conservative(make_sigma("rotational_2d"), dim=2)
        assert not rep.passes
        assert rep.refinement_ratio == pytest.approx(1.0, abs=1e-3)
        with pytest.raises(TransformError):
            build_G(make_sigma("rotational_2d"), dim=2)

    def test_open_loop(self):
        with pytest.raises(ValueError):
            check_conservative(make_sigma("gradient_2d"), loops=[np.array([[0.0, 0.0], [1.0, 0.0]])])

    def test_needs_loops_or_dim(self):
        with pytest.raises(ValueError):
            check_conservative(make_sigma("gradient_2d"))


class TestBuildG:
    def test_identity(self):
        G = build_G(make_sigma("identity"))
        z = np.linspace(-3, 3, 7)[:, None]
        assert np.allclose(G(z), z, rtol=0, atol=1e-14)

    def test_constant(self):
        G = build_G(make_sigma("constant", c=2.0))
        z = np.linspace(-3, 3, 7)[:, None]
        assert np.allclose(G(z), z / 2, rtol=0, atol=1e-14)

    def test_closed_form(self, G_sin):
        expected = 2 / np.sqrt(3) * (np.arctan((2 * np.tan(1.5) + 1) / np.sqrt(3)) - np.arctan(1 / np.sqrt(3)))
        assert G_sin(np.array([[3.0]]))[0, 0] == pytest.approx(expected, abs=1e-11)
        assert G_sin(np.array([[0.0]]))[0, 0] == 0.0

    def test_gradient_potential(self, G_2d):
        z = np.random.default_rng(3).uniform(-3, 3, size=(20, 2))
        assert np.abs(G_2d(z) - make_sigma("gradient_2d").potential(z)).max() <= 1e-10

    @given(st.floats(-8, 8), st.floats(-8, 8))
    def test_strictly_increasing(self, a, b):
        G = build_G(make_sigma("two_plus_sin"))
        lo, hi = sorted((a, b))
        if hi - lo < 1e-6:
            return
        ga, gb = G(np.array([[lo], [hi]]))[:, 0]
        assert gb > ga

    def test_derivative_inverts_sigma(self, G_2d):
        z = np.random.default_rng(5).uniform(-3, 3, size=(10, 2))
        prod = np.einsum("kab,kbc->kac", G_2d.derivative(z), make_sigma("gradient_2d").sigma(z))
        assert np.allclose(prod, np.eye(2), rtol=0, atol=1e-12)

    def test_derivative_matches_finite_difference(self, G_sin):
        x, eps = np.array([[0.8]]), 1e-5
        fd = (G_sin(x + eps) - G_sin(x - eps)) / (2 * eps)
        assert fd[0, 0] == pytest.approx(G_sin.derivative(x)[0, 0, 0], rel=1e-8)

    def test_growth_bound(self, G_sin, G_2d):
        probes = np.linspace(-20, 20, 81)[:, None]
        assert G_sin.lam_prime == pytest.approx(1 / 9)
        assert growth_margin(G_sin, probes) >= 0
        assert growth_margin(G_2d, np.random.default_rng(1).uniform(-10, 10, (40, 2))) >= 0


class TestInverse:
    def test_round_trip_scalar(self, G_sin):
        x = np.linspace(-15, 15, 61)[:, None]
        assert np.abs(invert_G(G_sin, G_sin(x)) - x).max() <= 1e-10

    def test_round_trip_plane(self, G_2d):
        x = np.random.default_rng(8).uniform(-4, 4, size=(25, 2))
        assert np.abs(G_2d.inverse(G_2d(x)) - x).max() <= 1e-10

    def test_warm_start(self, G_sin):
        z = G_sin(np.array([[2.5]]))
        assert invert_G(G_sin, z, start=np.array([[-30.0]]))[0, 0] == pytest.approx(2.5, abs=1e-10)


class TestReducedDrift:
    def test_constant_sigma(self):
        G = build_G(make_sigma("constant", c=2.0))
        ft = reduce_drift(G, make_drift("cos"))
        z = np.linspace(-2, 2, 9)[:, None]
        assert np.allclose(ft(z), np.cos(2 * z) / 2, rtol=0, atol=1e-12)

    def test_sup_bound(self, G_sin):
        ft = reduce_drift(G_sin, make_drift("cos"))
        z = np.linspace(-10, 10, 201)[:, None]
        assert np.abs(ft(z)).max() <= ft.sup

    def test_unit_sigma_solver_with_constant_sigma(self):
        (rp,) = ladder(1, [64])
        G = build_G(make_sigma("constant", c=2.0))
        z = solve_unit_sigma(G, make_drift("zero"), [0.6], rp)
        assert np.allclose(z.values[:, 0], 0.3 + rp.base.values[:, 0], rtol=0, atol=1e-14)


class TestEquivalence:
    def test_residual_and_converse_shrink(self, G_sin):
        steps = [64, 256, 1024]
        reps = []
        for rp in ladder(6, steps, oversample=4):
            prob = RdeProblem([0.3], make_drift("cos"), make_sigma("two_plus_sin"), rp)
            reps.append(verify_transform_equivalence(prob, solve_euler(prob), G_sin))
        assert all(r.roundtrip <= 1e-10 for r in reps)
        assert reps[-1].residual < reps[0].residual
        assert reps[-1].converse < reps[0].converse
        assert reps[-1].profile[0] == pytest.approx(0.0, abs=1e-12)

    def test_constant_sigma_exact(self):
        (rp,) = ladder(2, [128])
        prob = RdeProblem([0.3], make_drift("zero"), make_sigma("constant", c=2.0), rp)
        rep = verify_transform_equivalence(prob, solve_euler(prob))
        assert rep.residual <= 1e-12 and rep.converse <= 1e-12

    def test_rejects_ito_noise(self, G_sin, bm_lift_1d):
        prob = RdeProblem([0.3], make_drift("cos"), make_sigma("two_plus_sin"),
                          lift_ito_from_geometric(bm_lift_1d))
        with pytest.raises(ValueError):
            verify_transform_equivalence(prob, solve_euler(prob), G_sin)
