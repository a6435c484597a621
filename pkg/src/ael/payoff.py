"""Payoff functionals of the quoting game in the illiquid limit.

Player a holds noise level sigma_a, assumes the opponent plays a known
strategy delta, and chooses a quote offset x.  Writing u = (x + d)/S
with d = delta(sigma_b), S = Sigma_rho(sigma_a, sigma_b) and averaging
over sigma_b uniform on [sigma_minus, sigma_plus], the base expected
payoff is

    e(x) = avg[ (x - d)/2 * (1 - Phi(u)) + S (1/2 - Q) Phi'(u) ]

with first and second derivatives

    e'(x)  = avg[ (1 - Phi(u))/2 + (-x Q~ + d Q)/S * Phi'(u) ]
    e''(x) = avg[ Phi'(u)/S * ( -(1/2 + Q~ + Q d^2/S^2)
                                + (Q~ - Q) x d / S^2 + Q~ x^2 / S^2 ) ]

Fee schemes modify these additively:

    SpreadQuad(g):  e(x) - g x^2            (derivative -2 g x)
    MidQuad(g):     e(x) - (g/4) (x^2 - 2 x E[d] + E[d^2] + sigma_a^2
                                  + E[sigma_b^2] + 2 rho sigma_a E[sigma_b])
                    (derivative -(g/2)(x - E[d]))

Under half-linear demand schedules of slope kbar the payoff is the
volume-weighted variant

    h(x)  = (kbar/2) avg[ (S^2 (1/2 - Q) - (x - d)(d + x)/2)(1 - Phi(u))
                          + S (x - d)/2 * Phi'(u) ] - g x^2
    h'(x) = (kbar/2) avg[ -x (1 - Phi(u)) + S Q Phi'(u) ] - 2 g x.

Every quantity that does not depend on x (nodes, S, Q, strategy values
at the nodes, strategy moments) is cached at context construction, so
the argmax loops pay only Phi/Phi' evaluations per call.  Contexts are
immutable and evaluations pure, hence freely shareable across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, WrongScheme
from .gaussmath import QuadratureRule, norm_cdf, norm_pdf
from .model import (
    FeeScheme,
    LinearDemand,
    MarketParams,
    MidQuad,
    NoFee,
    SpreadQuad,
    Strategy,
    average_nodes,
    q_rho,
    q_tilde_rho,
    sigma_rho,
    uniform_sigma_moments,
)


@dataclass(frozen=True)
class PayoffContext:
    """Frozen evaluation context for one (sigma_a, opponent strategy) pair."""

    sigma_a: float
    delta: Strategy
    params: MarketParams
    fees: FeeScheme
    rule: QuadratureRule | None = None

    # caches, derived in __post_init__
    nodes: np.ndarray = field(init=False, repr=False)
    w: np.ndarray = field(init=False, repr=False)
    delta_b: np.ndarray = field(init=False, repr=False)
    sig: np.ndarray = field(init=False, repr=False)
    q: np.ndarray = field(init=False, repr=False)
    qt: np.ndarray = field(init=False, repr=False)
    e_delta: float = field(init=False, repr=False)
    e_delta2: float = field(init=False, repr=False)

    def __post_init__(self):
        p = self.params
        slack = 1e-12 * max(1.0, p.sigma_plus)
        if not p.sigma_minus - slack <= self.sigma_a <= p.sigma_plus + slack:
            raise DomainError(
                f"sigma_a = {self.sigma_a} outside [{p.sigma_minus}, {p.sigma_plus}]"
            )
        if self.rule is not None and not p.is_degenerate:
            if abs(self.rule.a - p.sigma_minus) > 1e-9 or abs(self.rule.b - p.sigma_plus) > 1e-9:
                raise DomainError("quadrature rule does not span the sigma interval")
            nodes = self.rule.nodes
            w = self.rule.weights / (p.sigma_plus - p.sigma_minus)
        else:
            nodes, w = average_nodes(p)
        sa = float(self.sigma_a)
        set_ = object.__setattr__
        set_(self, "nodes", nodes)
        set_(self, "w", w)
        set_(self, "delta_b", np.asarray(self.delta(nodes), dtype=float))
        set_(self, "sig", sigma_rho(sa, nodes, p.rho))
        set_(self, "q", q_rho(sa, nodes, p.rho))
        set_(self, "qt", q_tilde_rho(sa, nodes, p.rho))
        set_(self, "e_delta", float(np.dot(w, self.delta_b)))
        set_(self, "e_delta2", float(np.dot(w, self.delta_b**2)))


def base_payoff(x: float, ctx: PayoffContext) -> float:
    """Expected payoff with no fees, regardless of ctx.fees."""
    u = (x + ctx.delta_b) / ctx.sig
    terms = 0.5 * (x - ctx.delta_b) * (1.0 - norm_cdf(u)) + ctx.sig * (0.5 - ctx.q) * norm_pdf(u)
    return float(np.dot(ctx.w, terms))


def _base_deriv(x: float, ctx: PayoffContext) -> float:
    u = (x + ctx.delta_b) / ctx.sig
    terms = 0.5 * (1.0 - norm_cdf(u)) + (
        (-x * ctx.qt + ctx.delta_b * ctx.q) / ctx.sig
    ) * norm_pdf(u)
    return float(np.dot(ctx.w, terms))


def _base_second_deriv(x: float, ctx: PayoffContext) -> float:
    u = (x + ctx.delta_b) / ctx.sig
    s2 = ctx.sig * ctx.sig
    bracket = (
        -(0.5 + ctx.qt + ctx.q * ctx.delta_b**2 / s2)
        + (ctx.qt - ctx.q) * x * ctx.delta_b / s2
        + ctx.qt * x * x / s2
    )
    return float(np.dot(ctx.w, norm_pdf(u) / ctx.sig * bracket))


def _mid_quad_constant(ctx: PayoffContext) -> float:
    """x-free part of the mid-price penalty expectation (without gamma/4)."""
    e_sb, e_sb2 = uniform_sigma_moments(ctx.params)
    sa = ctx.sigma_a
    return ctx.e_delta2 + sa * sa + e_sb2 + 2.0 * ctx.params.rho * sa * e_sb


def penalized_payoff(x: float, ctx: PayoffContext) -> float:
    """Payoff net of the exchange penalty, dispatching on the fee scheme."""
    fees = ctx.fees
    if isinstance(fees, NoFee):
        return base_payoff(x, ctx)
    if isinstance(fees, SpreadQuad):
        return base_payoff(x, ctx) - fees.gamma * x * x
    if isinstance(fees, MidQuad):
        pen = 0.25 * (x * x - 2.0 * x * ctx.e_delta + _mid_quad_constant(ctx))
        return base_payoff(x, ctx) - fees.gamma * pen
    if isinstance(fees, LinearDemand):
        return half_linear_payoff(x, ctx)
    raise WrongScheme(f"unknown fee scheme {fees!r}")


def payoff_deriv(x: float, ctx: PayoffContext) -> float:
    """d/dx of penalized_payoff."""
    fees = ctx.fees
    if isinstance(fees, NoFee):
        return _base_deriv(x, ctx)
    if isinstance(fees, SpreadQuad):
        return _base_deriv(x, ctx) - 2.0 * fees.gamma * x
    if isinstance(fees, MidQuad):
        return _base_deriv(x, ctx) - 0.5 * fees.gamma * (x - ctx.e_delta)
    if isinstance(fees, LinearDemand):
        return half_linear_deriv(x, ctx)
    raise WrongScheme(f"unknown fee scheme {fees!r}")


def payoff_second_deriv(x: float, ctx: PayoffContext) -> float:
    """d^2/dx^2 of penalized_payoff."""
    fees = ctx.fees
    if isinstance(fees, NoFee):
        return _base_second_deriv(x, ctx)
    if isinstance(fees, SpreadQuad):
        return _base_second_deriv(x, ctx) - 2.0 * fees.gamma
    if isinstance(fees, MidQuad):
        return _base_second_deriv(x, ctx) - 0.5 * fees.gamma
    if isinstance(fees, LinearDemand):
        return _half_linear_second_deriv(x, ctx)
    raise WrongScheme(f"unknown fee scheme {fees!r}")


def _require_linear_demand(ctx: PayoffContext) -> LinearDemand:
    if not isinstance(ctx.fees, LinearDemand):
        raise WrongScheme(
            f"half-linear payoff requires LinearDemand fees, got {type(ctx.fees).__name__}"
        )
    return ctx.fees


def half_linear_payoff(x: float, ctx: PayoffContext) -> float:
    """Volume-weighted payoff under half-linear demand schedules."""
    fees = _require_linear_demand(ctx)
    d = ctx.delta_b
    u = (x + d) / ctx.sig
    s2 = ctx.sig * ctx.sig
    terms = (s2 * (0.5 - ctx.q) - 0.5 * (x - d) * (d + x)) * (1.0 - norm_cdf(u)) + ctx.sig * (
        0.5 * (x - d)
    ) * norm_pdf(u)
    val = 0.5 * fees.kbar * float(np.dot(ctx.w, terms))
    return val - fees.gamma * x * x


def half_linear_deriv(x: float, ctx: PayoffContext) -> float:
    """d/dx of half_linear_payoff."""
    fees = _require_linear_demand(ctx)
    u = (x + ctx.delta_b) / ctx.sig
    terms = -x * (1.0 - norm_cdf(u)) + ctx.sig * ctx.q * norm_pdf(u)
    return 0.5 * fees.kbar * float(np.dot(ctx.w, terms)) - 2.0 * fees.gamma * x


def _half_linear_second_deriv(x: float, ctx: PayoffContext) -> float:
    fees = _require_linear_demand(ctx)
    u = (x + ctx.delta_b) / ctx.sig
    terms = -(1.0 - norm_cdf(u)) + (
        (ctx.qt * x - ctx.q * ctx.delta_b) / ctx.sig
    ) * norm_pdf(u)
    return 0.5 * fees.kbar * float(np.dot(ctx.w, terms)) - 2.0 * fees.gamma
