import math

import numpy as np
import pytest

from ael.errors import WrongScheme
from ael.gaussmath import gauss_legendre, norm_cdf, norm_pdf
from ael.model import (
    LinearDemand,
    MarketParams,
    MidQuad,
    NoFee,
    SpreadQuad,
    Strategy,
    default_rule,
)
from ael.payoff import (
    PayoffContext,
    base_payoff,
    half_linear_deriv,
    half_linear_payoff,
    payoff_deriv,
    payoff_second_deriv,
    penalized_payoff,
)

ALL_SCHEMES = (NoFee(), SpreadQuad(2.0), MidQuad(0.5), LinearDemand(1.0, 0.3))


def ctx_for(params, fees, delta_const=0.3, sigma_a=None, grid_n=51):
    sigma_a = 0.5 * (params.sigma_minus + params.sigma_plus) if sigma_a is None else sigma_a
    delta = Strategy.constant(delta_const, params, grid_n)
    return PayoffContext(sigma_a, delta, params, fees, default_rule(params))


class TestBasePayoff:
    def test_degenerate_zero_strategy(self):
        # single sigma, rho = 0, delta = 0: e(x) = (x/2)(1 - Phi(x/(s sqrt2)))
        p = MarketParams(1.1, 1.1, 0.0)
        ctx = ctx_for(p, NoFee(), delta_const=0.0, sigma_a=1.1)
        assert base_payoff(0.0, ctx) == pytest.approx(0.0, abs=1e-16)
        for x in (0.2, 0.7, 1.5):
            expected = 0.5 * x * (1.0 - norm_cdf(x / (1.1 * math.sqrt(2))))
            assert base_payoff(x, ctx) == pytest.approx(expected, abs=1e-15)

    def test_degenerate_constant_strategy_at_zero(self):
        p = MarketParams(1.1, 1.1, 0.0)
        d = 0.4
        ctx = ctx_for(p, NoFee(), delta_const=d, sigma_a=1.1)
        expected = -0.5 * d * (1.0 - norm_cdf(d / (1.1 * math.sqrt(2))))
        assert base_payoff(0.0, ctx) == pytest.approx(expected, abs=1e-15)

    def test_ignores_fee_scheme(self, main_params):
        a = base_payoff(0.4, ctx_for(main_params, NoFee()))
        b = base_payoff(0.4, ctx_for(main_params, SpreadQuad(3.0)))
        assert a == b

    def test_large_offset_behavior(self, main_params):
        # the raw payoff decays to zero at large offsets (the trade
        # probability dies faster than the offset grows); the spread
        # penalty is what drives the objective to minus infinity
        ctx = ctx_for(main_params, NoFee())
        vals = [base_payoff(x, ctx) for x in (5.0, 7.0, 9.0)]
        assert all(0 <= v < 1e-4 for v in vals)
        assert vals[0] > vals[1] > vals[2]
        pen = ctx_for(main_params, SpreadQuad(2.0))
        pvals = [penalized_payoff(x, pen) for x in (5.0, 7.0, 9.0)]
        assert all(v < 0 for v in pvals)
        assert pvals[0] > pvals[1] > pvals[2]


class TestPenalizedPayoff:
    def test_no_fee_equals_base(self, main_params):
        ctx = ctx_for(main_params, NoFee())
        assert penalized_payoff(0.7, ctx) == base_payoff(0.7, ctx)

    def test_spread_quad_vanishes_at_zero(self, main_params):
        ctx = ctx_for(main_params, SpreadQuad(1.7))
        assert penalized_payoff(0.0, ctx) == base_payoff(0.0, ctx)

    def test_spread_quad_additive(self):
        p = MarketParams(1.1, 1.1, 0.0)
        ctx = ctx_for(p, SpreadQuad(1.0), delta_const=0.1, sigma_a=1.1)
        assert penalized_payoff(0.1, ctx) == pytest.approx(
            base_payoff(0.1, ctx) - 0.01, abs=1e-15
        )

    def test_mid_quad_quadratic_expansion(self):
        # delta = 0, x = 0, sigma_a = 1, single sigma, rho = 0:
        # penalty = (gamma/4)(sigma_a^2 + E[sigma_b^2]) = 0.25 at gamma = 1/2
        p = MarketParams(1.0, 1.0, 0.0)
        ctx = ctx_for(p, MidQuad(0.5), delta_const=0.0, sigma_a=1.0)
        assert penalized_payoff(0.0, ctx) == pytest.approx(-0.25, abs=1e-14)


class TestDerivatives:
    def test_positive_for_nonpositive_offsets(self, main_params):
        for fees in (NoFee(), SpreadQuad(2.0)):
            ctx = ctx_for(main_params, fees)
            for x in (-5.0, -2.0, -1.0, -0.25, 0.0):
                assert payoff_deriv(x, ctx) > 0.0

    def test_symmetric_phi_term_cancels(self):
        # single sigma, constant delta, x = delta: only the CDF and fee
        # terms survive; this is the degenerate first-order condition
        sigma, d, gamma = 1.1, 0.3, 0.8
        p = MarketParams(sigma, sigma, 0.0)
        ctx = ctx_for(p, SpreadQuad(gamma), delta_const=d, sigma_a=sigma)
        expected = 0.5 * (1.0 - norm_cdf(math.sqrt(2) * d / sigma)) - 2 * gamma * d
        assert payoff_deriv(d, ctx) == pytest.approx(expected, abs=1e-14)

    @pytest.mark.parametrize("fees", ALL_SCHEMES, ids=lambda f: type(f).__name__)
    def test_first_derivative_matches_finite_differences(self, main_params, fees):
        rng = np.random.default_rng(99)
        h, worst = 1e-4, 0.0
        for _ in range(40):
            sa = rng.uniform(main_params.sigma_minus, main_params.sigma_plus)
            x = rng.uniform(0.0, 2.0)
            ctx = ctx_for(main_params, fees, sigma_a=sa)
            fd = (penalized_payoff(x + h, ctx) - penalized_payoff(x - h, ctx)) / (2 * h)
            worst = max(worst, abs(payoff_deriv(x, ctx) - fd))
        assert worst <= 1e-6

    @pytest.mark.parametrize("fees", ALL_SCHEMES, ids=lambda f: type(f).__name__)
    def test_second_derivative_matches_finite_differences(self, main_params, fees):
        rng = np.random.default_rng(7)
        h, worst = 1e-3, 0.0
        for _ in range(25):
            sa = rng.uniform(main_params.sigma_minus, main_params.sigma_plus)
            x = rng.uniform(0.0, 1.5)
            ctx = ctx_for(main_params, fees, sigma_a=sa)
            fd = (payoff_deriv(x + h, ctx) - payoff_deriv(x - h, ctx)) / (2 * h)
            worst = max(worst, abs(payoff_second_deriv(x, ctx) - fd))
        assert worst <= 1e-5

    def test_second_derivative_reference_point(self):
        # unit sigma, delta = 0, x = 0: integral term is -phi(0)/sqrt(2),
        # the spread penalty adds -2 gamma
        p = MarketParams(1.0, 1.0, 0.0)
        ctx = ctx_for(p, SpreadQuad(2.0), delta_const=0.0, sigma_a=1.0)
        expected = -norm_pdf(0.0) / math.sqrt(2.0) - 4.0
        got = payoff_second_deriv(0.0, ctx)
        assert got == pytest.approx(expected, abs=1e-14)
        assert got < -4.0


class TestHalfLinear:
    def test_requires_linear_demand(self, main_params):
        ctx = ctx_for(main_params, SpreadQuad(1.0))
        with pytest.raises(WrongScheme):
            half_linear_payoff(0.3, ctx)
        with pytest.raises(WrongScheme):
            half_linear_deriv(0.3, ctx)

    def test_kbar_is_a_global_factor(self, main_params):
        c1 = ctx_for(main_params, LinearDemand(1.0, 0.0))
        c2 = ctx_for(main_params, LinearDemand(2.0, 0.0))
        for x in (-0.5, 0.0, 0.3, 1.0):
            assert half_linear_payoff(x, c2) == pytest.approx(
                2.0 * half_linear_payoff(x, c1), rel=1e-14
            )

    def test_symmetric_zero_case(self):
        # single sigma, delta = 0, x = 0, rho = 0: Q = 1/2 kills the first
        # term and (x - d)/2 = 0 kills the second
        p = MarketParams(0.9, 0.9, 0.0)
        ctx = ctx_for(p, LinearDemand(1.3, 0.0), delta_const=0.0, sigma_a=0.9)
        assert half_linear_payoff(0.0, ctx) == pytest.approx(0.0, abs=1e-16)

    def test_positive_derivative_for_nonpositive_offsets(self, main_params):
        ctx = ctx_for(main_params, LinearDemand(1.0, 0.0))
        for x in (-5.0, -1.0, -0.1, 0.0):
            assert half_linear_deriv(x, ctx) > 0.0

    def test_symmetric_derivative_reduction(self):
        # single sigma = 1, rho = 0, delta = d, x = d:
        # (kbar/2)(-d (1 - Phi(sqrt2 d)) + phi(sqrt2 d)/sqrt2)
        d, kbar = 0.25, 1.0
        p = MarketParams(1.0, 1.0, 0.0)
        ctx = ctx_for(p, LinearDemand(kbar, 0.0), delta_const=d, sigma_a=1.0)
        u = math.sqrt(2) * d
        expected = 0.5 * kbar * (-d * (1 - norm_cdf(u)) + norm_pdf(u) / math.sqrt(2))
        assert half_linear_deriv(d, ctx) == pytest.approx(expected, abs=1e-14)

    def test_derivative_integrates_back_to_payoff(self, main_params):
        # quadrature of h' over [x0, x1] reproduces h(x1) - h(x0)
        ctx = ctx_for(main_params, LinearDemand(1.0, 0.0), delta_const=0.2)
        x0, x1 = 0.1, 0.9
        rule = gauss_legendre(x0, x1, 48)
        integral = float(
            np.dot(rule.weights, [half_linear_deriv(float(x), ctx) for x in rule.nodes])
        )
        diff = half_linear_payoff(x1, ctx) - half_linear_payoff(x0, ctx)
        assert integral == pytest.approx(diff, abs=1e-8)

    def test_penalized_dispatch(self, main_params):
        ctx = ctx_for(main_params, LinearDemand(1.0, 0.4))
        assert penalized_payoff(0.3, ctx) == half_linear_payoff(0.3, ctx)
        assert payoff_deriv(0.3, ctx) == half_linear_deriv(0.3, ctx)
