"""The exchange's fee-design problem for the spread-penalty scheme.

The exchange collects gamma * (half-spread)^2 from each player and
tunes gamma.  In a degenerate market the equilibrium half-spread is the
scalar root delta(gamma) of the first-order condition, and the exchange
revenue 2 gamma delta^2 has a closed-form maximizer:

    gamma* = Phi'(y*) / (2 sqrt(2) sigma_eff),   delta* = sigma_eff y* / sqrt(2)

where y* is the unique root of 1 - Phi(y) - y Phi'(y) and
sigma_eff = sigma sqrt(1 - rho) generalizes the rho = 0 statement (it
reproduces the degenerate first-order condition exactly).

For a non-degenerate market there is no closed form; ``revenue_curve``
sweeps a gamma grid with per-point convergence flags and
``optimal_gamma_numeric`` runs a golden-section search on the converged
region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NoEquilibrium
from .gaussmath import Bracket, find_root, norm_cdf, norm_pdf
from .model import MarketParams, SpreadQuad, Strategy, average_nodes
from .equilibrium import SolverConfig, solve_degenerate, solve_fixed_point

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class FeeDesignResult:
    """Closed-form degenerate-market optimum."""

    gamma_star: float
    y_star: float
    delta_star: float
    revenue: float


@dataclass(frozen=True)
class RevenuePoint:
    gamma: float
    revenue: float
    converged: bool


def y_star(tol: float = 1e-15) -> float:
    """Unique root of 1 - Phi(y) - y Phi'(y), bracketed on [0.1, 3]."""

    def f(y: float) -> float:
        return 1.0 - norm_cdf(y) - y * norm_pdf(y)

    root = find_root(f, Bracket.scan(f, 0.1, 3.0), tol=tol)
    # one Newton polish: f'(y) = (y^2 - 2) Phi'(y)
    slope = (root * root - 2.0) * norm_pdf(root)
    if slope != 0.0:
        root -= f(root) / slope
    return root


def optimal_gamma_degenerate(sigma: float, rho: float = 0.0) -> FeeDesignResult:
    """Closed-form optimal fee for a degenerate market."""
    if not sigma > 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if not -1.0 < rho < 1.0:
        raise DomainError(f"rho must lie in (-1, 1), got {rho}")
    ys = y_star()
    sigma_eff = sigma * math.sqrt(1.0 - rho)
    gamma = norm_pdf(ys) / (2.0 * _SQRT2 * sigma_eff)
    delta = sigma_eff * ys / _SQRT2
    return FeeDesignResult(
        gamma_star=gamma,
        y_star=ys,
        delta_star=delta,
        revenue=2.0 * gamma * delta * delta,
    )


def revenue(
    gamma: float, params: MarketParams, cfg: SolverConfig = SolverConfig()
) -> float:
    """Per-player expected penalty gamma * E[delta(sigma)^2] at the
    equilibrium solved for SpreadQuad(gamma).

    Raises NoEquilibrium when the fixed-point iteration does not
    converge at this gamma.
    """
    if not gamma > 0.0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    fees = SpreadQuad(gamma)
    if params.is_degenerate:
        root = solve_degenerate(params, fees)
        return gamma * root * root
    report = solve_fixed_point(params, fees, cfg)
    if not report.converged:
        raise NoEquilibrium(
            f"fixed point did not converge at gamma = {gamma} "
            f"(residual {report.residual:.3e} after {report.iterations} iterations)"
        )
    nodes, w = average_nodes(params, cfg.quad_n)
    dvals = np.asarray(report.strategy(nodes), dtype=float)
    return gamma * float(np.dot(w, dvals * dvals))


def revenue_curve(
    gamma_grid,
    params: MarketParams,
    cfg: SolverConfig = SolverConfig(),
    warm_start: bool = True,
) -> list[RevenuePoint]:
    """Revenue at each gamma with convergence flags; never aborts the sweep.

    Non-degenerate solves reuse the previous converged strategy as the
    next initial iterate (``warm_start``), which only changes the
    iteration path, not the fixed point; results stay deterministic for
    a given grid.
    """
    gammas = [float(g) for g in gamma_grid]
    if not gammas:
        raise DomainError("gamma grid must be non-empty")
    if any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise DomainError("gamma grid must be strictly increasing")
    points: list[RevenuePoint] = []
    carry: Strategy | None = None
    for g in gammas:
        if params.is_degenerate:
            try:
                root = solve_degenerate(params, SpreadQuad(g))
                points.append(RevenuePoint(g, g * root * root, True))
            except Exception:
                points.append(RevenuePoint(g, math.nan, False))
            continue
        try:
            report = solve_fixed_point(
                params, SpreadQuad(g), cfg, init=carry if warm_start else None
            )
        except Exception:
            points.append(RevenuePoint(g, math.nan, False))
            carry = None
            continue
        if not report.converged:
            points.append(RevenuePoint(g, math.nan, False))
            carry = None
            continue
        nodes, w = average_nodes(params, cfg.quad_n)
        dvals = np.asarray(report.strategy(nodes), dtype=float)
        points.append(RevenuePoint(g, g * float(np.dot(w, dvals * dvals)), True))
        carry = report.strategy
    return points


def optimal_gamma_numeric(
    params: MarketParams,
    cfg: SolverConfig = SolverConfig(),
    lo: float = 0.05,
    hi: float = 5.0,
    tol: float = 1e-4,
) -> float:
    """Golden-section search for the revenue-maximizing gamma on [lo, hi].

    Assumes the solver converges on the whole interval (NoEquilibrium
    propagates otherwise) and that revenue is unimodal there, which
    holds in the degenerate closed-form case.
    """
    if not 0.0 < lo < hi:
        raise DomainError("need 0 < lo < hi")
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = revenue(c, params, cfg), revenue(d, params, cfg)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = revenue(c, params, cfg)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = revenue(d, params, cfg)
    return 0.5 * (a + b)
