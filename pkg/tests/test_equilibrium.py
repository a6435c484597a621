import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.optimize

from ael.errors import DegenerateCase, DomainError, WrongScheme
from ael.gaussmath import norm_cdf, norm_pdf
from ael.model import (
    LinearDemand,
    MarketParams,
    MidQuad,
    NoFee,
    SpreadQuad,
    Strategy,
)
from ael.equilibrium import (
    SolverConfig,
    best_response,
    existence_bound,
    no_ne_certificate,
    refine_config,
    solve_degenerate,
    solve_fixed_point,
    verify_ne,
)

FAST = SolverConfig(grid_n=41, tol=1e-7)


def spread_foc(x, sigma, rho, gamma):
    se = sigma * math.sqrt(1.0 - rho)
    return 0.5 * (1.0 - norm_cdf(math.sqrt(2.0) * x / se)) - 2.0 * gamma * x


class TestSolveDegenerate:
    def test_root_residual_and_oracle(self):
        p = MarketParams(1.1, 1.1, 0.0)
        for gamma in (0.05, 0.1, 2.0, 100.0):
            root = solve_degenerate(p, SpreadQuad(gamma))
            assert abs(spread_foc(root, 1.1, 0.0, gamma)) <= 1e-12 * max(1.0, gamma)
            oracle = scipy.optimize.brentq(
                lambda x: spread_foc(x, 1.1, 0.0, gamma), 0.0, 10.0, xtol=1e-15
            )
            assert root == pytest.approx(oracle, abs=1e-10)

    def test_large_gamma_bound(self):
        # the first-order condition forces delta <= 1/(4 gamma)
        p = MarketParams(1.1, 1.1, 0.0)
        assert solve_degenerate(p, SpreadQuad(100.0)) < 2.5e-3

    def test_linear_demand_root(self):
        p = MarketParams(1.0, 1.0, 0.0)
        root = solve_degenerate(p, LinearDemand(kbar=1.0, gamma=1.0))

        def foc(x):
            u = math.sqrt(2.0) * x
            return 0.5 * (-x * (1 - norm_cdf(u)) + norm_pdf(u) / math.sqrt(2)) - 2 * x

        oracle = scipy.optimize.brentq(foc, 0.0, 1.0, xtol=1e-15)
        assert root == pytest.approx(oracle, abs=1e-10)
        assert root == pytest.approx(0.06293586903381834, abs=1e-9)
        assert abs(foc(root)) <= 1e-12

    def test_wrong_schemes_rejected(self):
        p = MarketParams(1.1, 1.1, 0.0)
        with pytest.raises(WrongScheme):
            solve_degenerate(p, NoFee())
        with pytest.raises(WrongScheme):
            solve_degenerate(p, MidQuad(1.0))
        with pytest.raises(DomainError):
            solve_degenerate(MarketParams(0.1, 1.1, 0.0), SpreadQuad(1.0))

    @pytest.mark.parametrize("c", [0.5, 2.0])
    def test_scale_covariance(self, c):
        # (sigma, gamma) -> (c sigma, gamma/c) maps the root to c * root
        gamma = 0.1
        base = solve_degenerate(MarketParams(1.1, 1.1, 0.0), SpreadQuad(gamma))
        scaled = solve_degenerate(
            MarketParams(1.1 * c, 1.1 * c, 0.0), SpreadQuad(gamma / c)
        )
        assert scaled == pytest.approx(c * base, abs=1e-10)


class TestBestResponse:
    def test_degenerate_root_is_fixed_point(self):
        p = MarketParams(1.1, 1.1, 0.0)
        fees = SpreadQuad(0.0967)
        root = solve_degenerate(p, fees)
        delta = Strategy(np.array([1.1]), np.array([root]))
        br = best_response(delta, p, fees, FAST)
        assert br.values[0] == pytest.approx(root, abs=1e-8)

    def test_huge_gamma_pins_response_near_zero(self, main_params):
        fees = SpreadQuad(1e3)
        delta = Strategy.constant(0.1, main_params, FAST.grid_n)
        br = best_response(delta, main_params, fees, FAST)
        assert br.max_value() <= 1e-3

    def test_grid_refinement_stability(self, main_params):
        fees = SpreadQuad(2.0)
        coarse = Strategy.constant(0.06, main_params, 101)
        fine = Strategy.constant(0.06, main_params, 201)
        br_c = best_response(coarse, main_params, fees, SolverConfig())
        br_f = best_response(fine, main_params, fees, SolverConfig(grid_n=201))
        # compare on the shared sigma points (every other fine point)
        gap = np.max(np.abs(br_f.values[::2] - br_c.values))
        assert gap <= 1e-6

    def test_rho_assumption_enforced(self):
        p = MarketParams(0.1, 1.1, 0.5)
        with pytest.raises(DomainError):
            best_response(Strategy.constant(0.1, p, 11), p, SpreadQuad(2.0), FAST)


class TestSolveFixedPoint:
    def test_main_market_converges_monotone(self, main_params, solved_gamma2):
        rep = solved_gamma2
        assert rep.converged and rep.residual <= 1e-6
        assert bool(np.all(np.diff(rep.strategy.values) >= 0.0))
        assert rep.concavity_ok

    def test_strategies_shrink_with_fees(self, main_params):
        reps = {
            g: solve_fixed_point(main_params, SpreadQuad(g), FAST) for g in (2.0, 3.0)
        }
        assert all(r.converged for r in reps.values())
        assert np.all(reps[3.0].strategy.values <= reps[2.0].strategy.values + 1e-12)

    def test_degenerate_matches_scalar_root(self):
        p = MarketParams(1.1, 1.1, 0.0)
        fees = SpreadQuad(0.1)
        rep = solve_fixed_point(p, fees, FAST)
        root = solve_degenerate(p, fees)
        assert rep.converged
        assert rep.strategy.values[0] == pytest.approx(root, abs=1e-7)

    def test_near_degenerate_matches_scalar_root(self):
        fees = SpreadQuad(0.1)
        p = MarketParams(1.1 - 1e-6, 1.1, 0.0)
        rep = solve_fixed_point(p, fees, FAST)
        root = solve_degenerate(MarketParams(1.1, 1.1, 0.0), fees)
        assert rep.converged
        assert float(np.max(np.abs(rep.strategy.values - root))) <= 1e-5

    def test_residual_stable_under_quadrature_refinement(self, main_params, solved_gamma2):
        # recompute the best response with a doubled-order rule: the
        # reported residual may inflate by at most 10x
        cfg = refine_config(SolverConfig(), 2)
        br = best_response(solved_gamma2.strategy, main_params, SpreadQuad(2.0), cfg)
        res = float(np.max(np.abs(br.values - solved_gamma2.strategy.values)))
        assert res <= 10.0 * max(solved_gamma2.residual, SolverConfig().tol)

    def test_wrong_scheme_rejected(self, main_params):
        with pytest.raises(WrongScheme):
            solve_fixed_point(main_params, NoFee(), FAST)
        with pytest.raises(WrongScheme):
            solve_fixed_point(main_params, MidQuad(2.0), FAST)
        with pytest.raises(WrongScheme):
            solve_fixed_point(main_params, LinearDemand(1.0, 0.0), FAST)

    def test_linear_demand_fixed_point(self, main_params):
        rep = solve_fixed_point(main_params, LinearDemand(1.0, 1.0), FAST)
        assert rep.converged
        assert rep.strategy.max_value() < 0.2


class TestExistenceBound:
    def test_reference_values(self, main_params):
        c, gamma_min = existence_bound(main_params, SpreadQuad(2.0))
        assert c == pytest.approx(4.2973340293105098e-3, rel=1e-12)
        assert gamma_min == pytest.approx(30.434157886691928, rel=1e-12)

    def test_rho_zero_simplification(self, main_params):
        # C = 2 lam A sigma_minus^2/(sigma_plus sqrt2), A = 1/(1-(sm/sp)^2)
        sm, sp = main_params.sigma_minus, main_params.sigma_plus
        a = 1.0 / (1.0 - (sm / sp) ** 2)
        lam = 1.0 / (2.0 * a + 1.0)
        c, _ = existence_bound(main_params, SpreadQuad(2.0))
        assert c == pytest.approx(2 * lam * a * sm * sm / (sp * math.sqrt(2)), rel=1e-12)

    def test_linear_demand_threshold_constant(self, main_params):
        _, gamma_min = existence_bound(main_params, LinearDemand(1.0, 1.0))
        z = math.sqrt(2.0)
        assert gamma_min == pytest.approx(
            0.5 * (z * norm_pdf(z) - (1.0 - norm_cdf(z))), rel=1e-14
        )
        assert gamma_min == pytest.approx(0.5 * 0.12890414518515479, abs=1e-9)

    def test_degenerate_rejected(self):
        with pytest.raises(DegenerateCase):
            existence_bound(MarketParams(1.1, 1.1, 0.0), SpreadQuad(1.0))


class TestNoNeCertificate:
    def test_zero_strategy_quarter(self, main_params):
        cert = no_ne_certificate(Strategy.constant(0.0, main_params, 31), main_params)
        assert abs(cert - 0.25) <= 1e-10

    def test_bounded_strategy_lower_bound(self, main_params):
        m = 0.8
        cert = no_ne_certificate(Strategy.constant(m, main_params, 31), main_params)
        sig_min = math.sqrt(2.0) * main_params.sigma_minus
        assert cert >= 0.5 * (1.0 - norm_cdf(2.0 * m / sig_min))
        assert cert > 0.0

    def test_solved_strategy_in_open_interval(self, main_params, solved_gamma2):
        cert = no_ne_certificate(solved_gamma2.strategy, main_params)
        assert 0.0 < cert < 0.25


class TestVerifyNe:
    def test_solved_equilibrium_has_no_profitable_deviation(
        self, main_params, solved_gamma2
    ):
        gain = verify_ne(solved_gamma2.strategy, main_params, SpreadQuad(2.0))
        assert gain <= 1e-8

    def test_degenerate_closed_form(self):
        p = MarketParams(1.1, 1.1, 0.0)
        fees = SpreadQuad(0.1)
        root = solve_degenerate(p, fees)
        delta = Strategy(np.array([1.1]), np.array([root]))
        assert verify_ne(delta, p, fees) <= 1e-8

    def test_perturbed_strategy_gains(self):
        p = MarketParams(1.1, 1.1, 0.0)
        fees = SpreadQuad(0.1)
        root = solve_degenerate(p, fees)
        delta = Strategy(np.array([1.1]), np.array([root + 0.1]))
        assert verify_ne(delta, p, fees) > 1e-4

    def test_no_fee_always_gains(self, main_params, solved_gamma2):
        assert verify_ne(solved_gamma2.strategy, main_params, NoFee()) > 1e-4
