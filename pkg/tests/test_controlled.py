import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from roughflow.controlled import (
    ControlledPath, check_sewing_bound, compose_smooth, controlled_norm, identity_controlled,
    remainder, remainder_table, rough_integral, rough_integral_path, sewing_defects,
    write_defect_csv,
)
from roughflow.grid_path import GridPath, holder_norm, two_param_holder_norm
from roughflow.rough_lift import lift_ito_from_geometric

from conftest import ladder


def scalar_integrand(rp, phi, dphi):
    """``(phi(B), phi'(B))`` as a (n+1, 1, 1) integrand for a 1-d lift."""
    b = rp.base.values[:, 0]
    return ControlledPath(rp, phi(b)[:, None, None], dphi(b)[:, None, None, None])


class TestControlledPath:
    def test_shape_validation(self, bm_lift):
        n = bm_lift.steps
        with pytest.raises(ValueError):
            ControlledPath(bm_lift, np.zeros((n, 2)), np.zeros((n, 2, 2)))
        with pytest.raises(ValueError):
            ControlledPath(bm_lift, np.zeros((n + 1, 2)), np.zeros((n + 1, 2, 3)))
        with pytest.raises(ValueError):
            ControlledPath(bm_lift, np.full((n + 1, 2), np.inf), np.zeros((n + 1, 2, 2)))

    def test_identity_has_zero_remainder(self, bm_lift):
        cp = identity_controlled(bm_lift)
        assert np.abs(remainder_table(cp)).max() <= 1e-14
        assert controlled_norm(cp).remainder <= 1e-12

    def test_remainder_example(self):
        # Y = B^2 with Y' = 2B leaves R_{s,t} = (B_{s,t})^2
        (rp,) = ladder(2, [40])
        b = rp.base.values[:, 0]
        cp = ControlledPath(rp, b**2, (2 * b)[:, None, None])
        table = remainder_table(cp)[..., 0]
        inc = b[None, :] - b[:, None]
        upper = np.triu(np.ones_like(inc, dtype=bool))
        assert np.allclose(table[upper], inc[upper] ** 2, rtol=0, atol=1e-12)
        assert remainder(cp, 3, 17)[0] == pytest.approx((b[17] - b[3]) ** 2, abs=1e-12)

    def test_norm_example(self):
        (rp,) = ladder(2, [40])
        b = rp.base.values[:, 0]
        cp = ControlledPath(rp, b**2, (2 * b)[:, None, None])
        norm = controlled_norm(cp, 0.4)
        assert norm.gubinelli == pytest.approx(2 * holder_norm(rp.base, 0.4).value)
        inc = b[None, :] - b[:, None]
        assert norm.remainder == pytest.approx(two_param_holder_norm(inc**2, 0.8, rp.grid).value)
        assert norm.total == norm.gubinelli + norm.remainder

    def test_remainder_index_errors(self, bm_lift):
        cp = identity_controlled(bm_lift)
        with pytest.raises(IndexError):
            remainder(cp, 4, 3)

    def test_linear_combination(self, bm_lift):
        a = identity_controlled(bm_lift)
        b = compose_smooth(np.sin, lambda x: np.cos(x)[..., :, None] * np.eye(2), a)
        combo = a.scale(2.0) + b
        assert np.allclose(remainder_table(combo), 2 * remainder_table(a) + remainder_table(b))


class TestComposeSmooth:
    def test_identity_map(self, bm_lift):
        cp = identity_controlled(bm_lift)
        out = compose_smooth(lambda x: x, lambda x: np.broadcast_to(np.eye(2), x.shape + (2,)), cp)
        assert np.array_equal(out.values, cp.values)
        assert np.array_equal(out.derivative, cp.derivative)

    def test_constant_map(self, bm_lift):
        cp = identity_controlled(bm_lift)
        out = compose_smooth(lambda x: np.ones_like(x), lambda x: np.zeros(x.shape + (2,)), cp)
        assert np.all(out.values == 1) and np.all(out.derivative == 0)

    def test_square(self, bm_lift_1d):
        cp = identity_controlled(bm_lift_1d)
        out = compose_smooth(lambda x: x**2, lambda x: (2 * x)[..., None], cp)
        b = bm_lift_1d.base.values
        assert np.allclose(out.values, b**2)
        assert np.allclose(out.derivative[..., 0], 2 * b)

    def test_chain_rule_consistency(self, bm_lift_1d):
        # phi(psi(Y)) composed in two steps equals the one-step composition
        cp = identity_controlled(bm_lift_1d)
        inner = compose_smooth(np.sin, lambda x: np.cos(x)[..., None], cp)
        two = compose_smooth(np.exp, lambda x: np.exp(x)[..., None], inner)
        one = compose_smooth(lambda x: np.exp(np.sin(x)),
                             lambda x: (np.exp(np.sin(x)) * np.cos(x))[..., None], cp)
        assert np.allclose(two.values, one.values, rtol=1e-14)
        assert np.allclose(two.derivative, one.derivative, rtol=1e-14)

    def test_overflow_reported(self, bm_lift_1d):
        cp = identity_controlled(bm_lift_1d).scale(1e3)
        with pytest.raises(ValueError):
            compose_smooth(lambda x: np.exp(x * 1e3), lambda x: np.exp(x * 1e3)[..., None], cp)


class TestRoughIntegral:
    def test_constant_integrand(self, bm_lift):
        n = bm_lift.steps
        c = np.array([[1.5, -0.5]])
        cp = ControlledPath(bm_lift, np.broadcast_to(c, (n + 1, 1, 2)), np.zeros((n + 1, 1, 2, 2)))
        w = bm_lift.base.values
        assert rough_integral(cp, bm_lift)[0] == pytest.approx(c[0] @ (w[-1] - w[0]), abs=1e-13)

    def test_geometric_half_square(self, bm_lift_1d):
        cp = scalar_integrand(bm_lift_1d, lambda b: b, np.ones_like)
        b_T = bm_lift_1d.base.values[-1, 0]
        assert rough_integral(cp, bm_lift_1d)[0] == pytest.approx(0.5 * b_T**2, abs=1e-12)

    def test_ito_half_square_minus_half_horizon(self, bm_lift_1d):
        ito = lift_ito_from_geometric(bm_lift_1d)
        cp = scalar_integrand(bm_lift_1d, lambda b: b, np.ones_like)
        b_T = bm_lift_1d.base.values[-1, 0]
        assert rough_integral(cp, ito)[0] == pytest.approx(0.5 * b_T**2 - 0.5, abs=1e-12)

    def test_window_additivity(self, bm_lift_1d):
        cp = scalar_integrand(bm_lift_1d, np.sin, np.cos)
        n = bm_lift_1d.steps
        for u in (0, 1, 40, n - 1, n):
            total = rough_integral(cp, bm_lift_1d, 0, u) + rough_integral(cp, bm_lift_1d, u, n)
            assert np.allclose(total, rough_integral(cp, bm_lift_1d), rtol=0, atol=1e-14)
        path = rough_integral_path(cp, bm_lift_1d)
        assert path[0, 0] == 0.0
        assert np.allclose(path[37], rough_integral(cp, bm_lift_1d, 0, 37), rtol=0, atol=1e-14)

    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_linear_in_integrand(self, a, c):
        (rp,) = ladder(6, [32], oversample=4)
        y1 = scalar_integrand(rp, np.sin, np.cos)
        y2 = scalar_integrand(rp, lambda b: b**2, lambda b: 2 * b)
        lhs = rough_integral(y1.scale(a) + y2.scale(c), rp)
        rhs = a * rough_integral(y1, rp) + c * rough_integral(y2, rp)
        assert np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_shape_and_grid_checks(self, bm_lift, bm_lift_1d):
        with pytest.raises(ValueError):
            rough_integral(identity_controlled(bm_lift), bm_lift)
        cp = scalar_integrand(bm_lift_1d, np.sin, np.cos)
        (other,) = ladder(1, [64])
        with pytest.raises(ValueError):
            rough_integral(cp, other)
        with pytest.raises(IndexError):
            rough_integral(cp, bm_lift_1d, 5, 2)

    def test_refinement_converges(self):
        # compensated sums of sin(B) on nested grids of one path approach each other
        rps = ladder(8, [32, 128, 512], oversample=4)
        vals = [rough_integral(scalar_integrand(rp, np.sin, np.cos), rp)[0] for rp in rps]
        assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])


class TestSewing:
    def test_constant_integrand_is_exact(self, bm_lift):
        n = bm_lift.steps
        cp = ControlledPath(bm_lift, np.ones((n + 1, 1, 2)), np.zeros((n + 1, 1, 2, 2)))
        rep = check_sewing_bound(cp, bm_lift, lengths=[2, 4, 8])
        assert rep.exact and rep.slope == np.inf

    def test_linear_integrand_in_one_dimension_is_exact(self, bm_lift_1d):
        # for Y = B the one-step term equals the integral on every pair
        cp = scalar_integrand(bm_lift_1d, lambda b: b, np.ones_like)
        _, _, d = sewing_defects(cp, bm_lift_1d)
        assert d.max() <= 1e-12

    def test_local_order_exceeds_one(self):
        (rp,) = ladder(42, [4096], oversample=4)
        cp = scalar_integrand(rp, lambda b: 2 + np.sin(b), np.cos)
        rep = check_sewing_bound(cp, rp)
        assert not rep.exact
        assert rep.slope >= 1.1
        assert np.isnan(rep.bound_factor)

    def test_bound_ratio_finite_on_small_grids(self):
        (rp,) = ladder(3, [256], oversample=4, alpha=0.4)
        cp = scalar_integrand(rp, lambda b: 2 + np.sin(b), np.cos)
        rep = check_sewing_bound(cp, rp, lengths=[1, 2, 4])
        assert np.isfinite(rep.bound_factor) and rep.bound_factor > 0
        assert 0 < rep.ratio < np.inf

    def test_pairs_mode_and_unknown_mode(self, bm_lift_1d):
        cp = scalar_integrand(bm_lift_1d, np.sin, np.cos)
        rep = check_sewing_bound(cp, bm_lift_1d, mode="pairs")
        assert len(rep.defects) == len(rep.lengths) > 0
        with pytest.raises(ValueError):
            check_sewing_bound(cp, bm_lift_1d, mode="triangles")

    def test_defect_csv(self, tmp_path, bm_lift_1d):
        cp = scalar_integrand(bm_lift_1d, np.sin, np.cos)
        target = tmp_path / "defects.csv"
        write_defect_csv(cp, bm_lift_1d, target, min_length=2)
        lines = target.read_text().splitlines()
        assert lines[0] == "s,t,defect"
        data = np.loadtxt(target, delimiter=",", skiprows=1)
        n = bm_lift_1d.steps
        assert len(data) == (n - 1) * n // 2
        assert np.all(data[:, 1] > data[:, 0]) and np.all(data[:, 2] >= 0)
