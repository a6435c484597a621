"""Equilibrium computation for the quoting game.

A strategy delta is an equilibrium when, for every sigma_a, delta(sigma_a)
maximizes the penalized payoff against delta itself.  Equilibria are
computed as fixed points of the best-response operator by damped Picard
iteration; convergence is never assumed, only verified through the
sup-norm residual |delta - BR(delta)|.

Without fees (and with the mid-price penalty alone) no equilibrium
exists; ``no_ne_certificate`` returns the strictly positive aggregated
first-order-condition integral that witnesses this, and ``verify_ne``
measures the best deviation gain a player can realize against a
candidate strategy.

For a degenerate market (sigma_minus = sigma_plus) the equilibrium
reduces to a scalar root of the one-dimensional first-order condition,
solved to near machine precision by ``solve_degenerate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    BracketFailure,
    DegenerateCase,
    DomainError,
    NonConcave,
    WrongScheme,
)
from .gaussmath import Bracket, find_root, maximize_concave, norm_cdf, norm_pdf
from .model import (
    FeeScheme,
    LinearDemand,
    MarketParams,
    MidQuad,
    NoFee,
    SpreadQuad,
    Strategy,
    average_nodes,
    default_rule,
    q_rho,
    sigma_rho,
    uniform_grid,
)
from .payoff import PayoffContext, payoff_deriv, payoff_second_deriv, penalized_payoff

_SQRT2 = math.sqrt(2.0)
_MAX_DOUBLINGS = 60


@dataclass(frozen=True)
class SolverConfig:
    """Fixed-point solver knobs."""

    grid_n: int = 101
    damping: float = 0.5
    tol: float = 1e-7
    max_iter: int = 200
    search_cap: float = 1.0
    quad_n: int = 64

    def __post_init__(self):
        if self.grid_n < 2:
            raise DomainError("grid_n must be >= 2")
        if not 0.0 < self.damping <= 1.0:
            raise DomainError("damping must lie in (0, 1]")
        if not self.tol > 0.0:
            raise DomainError("tol must be positive")
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")
        if not self.search_cap > 0.0:
            raise DomainError("search_cap must be positive")
        if self.quad_n < 1:
            raise DomainError("quad_n must be >= 1")


@dataclass(frozen=True)
class EquilibriumReport:
    """Solved strategy with residual and existence-bound diagnostics."""

    strategy: Strategy
    residual: float
    iterations: int
    converged: bool
    bound_C: float
    gamma_min: float
    concavity_ok: bool


def _scheme_gamma(fees: FeeScheme) -> float:
    if isinstance(fees, (SpreadQuad, LinearDemand)):
        return fees.gamma
    raise WrongScheme(f"no penalty coefficient on {type(fees).__name__}")


def _require_solvable(fees: FeeScheme) -> None:
    if isinstance(fees, (NoFee, MidQuad)):
        raise WrongScheme(
            f"{type(fees).__name__} admits no equilibrium; "
            "use SpreadQuad or LinearDemand with gamma > 0"
        )
    if isinstance(fees, LinearDemand) and not fees.gamma > 0.0:
        raise WrongScheme("LinearDemand needs gamma > 0 for an equilibrium")


def _require_rho_bound(params: MarketParams) -> None:
    if not params.rho_bound_ok:
        raise DomainError(
            f"equilibrium computation assumes rho <= sigma_minus/sigma_plus; "
            f"rho = {params.rho} exceeds {params.sigma_minus / params.sigma_plus:.6g}"
        )


def _degenerate_foc(fees: FeeScheme, sigma: float, rho: float):
    """Scalar first-order condition of the symmetric degenerate game."""
    se = sigma * math.sqrt(1.0 - rho)
    g = _scheme_gamma(fees)
    if isinstance(fees, SpreadQuad):

        def f(x: float) -> float:
            return 0.5 * (1.0 - norm_cdf(_SQRT2 * x / se)) - 2.0 * g * x

        def df(x: float) -> float:
            return -0.5 * norm_pdf(_SQRT2 * x / se) * _SQRT2 / se - 2.0 * g

        hi = 0.25 / g + se
        return f, df, hi

    kbar = fees.kbar

    def f(x: float) -> float:
        u = _SQRT2 * x / se
        return 0.5 * kbar * (
            -x * (1.0 - norm_cdf(u)) + (se / _SQRT2) * norm_pdf(u)
        ) - 2.0 * g * x

    def df(x: float) -> float:
        # the two Phi' terms cancel along the diagonal, leaving a strictly
        # negative slope for every x
        u = _SQRT2 * x / se
        return -0.5 * kbar * (1.0 - norm_cdf(u)) - 2.0 * g

    hi = se
    for _ in range(_MAX_DOUBLINGS):
        if f(hi) < 0.0:
            break
        hi *= 2.0
    else:
        raise BracketFailure("degenerate first-order condition never turns negative")
    return f, df, hi


def _degenerate_root(fees: FeeScheme, sigma: float, rho: float) -> float:
    f, df, hi = _degenerate_foc(fees, sigma, rho)
    root = find_root(f, Bracket.scan(f, 0.0, hi), tol=1e-15)
    # two guarded Newton steps push the FOC residual to machine level
    for _ in range(2):
        slope = df(root)
        if slope == 0.0:
            break
        step = f(root) / slope
        cand = root - step
        if 0.0 < cand < hi:
            root = cand
    return root


def solve_degenerate(params: MarketParams, fees: FeeScheme) -> float:
    """Scalar equilibrium half-spread of a degenerate market.

    Only the spread-penalty and half-linear schemes admit one; the
    first-order condition is strictly decreasing past its root, which is
    located to |FOC| <= 1e-12 * max(1, gamma).
    """
    if not params.is_degenerate:
        raise DomainError("solve_degenerate requires sigma_minus = sigma_plus")
    _require_solvable(fees)
    _require_rho_bound(params)
    return _degenerate_root(fees, params.sigma_plus, params.rho)


def existence_bound(params: MarketParams, fees: FeeScheme) -> tuple[float, float]:
    """Closed-form invariant-set bound C and penalty threshold gamma_min.

    For the spread penalty, strategies within [0, C] keep every payoff
    strictly concave on (0, C), and gamma >= gamma_min forces the best
    response back into [0, C]; the threshold is conservative by
    construction.  For half-linear demand the threshold is
    (kbar/2) * max_z(z Phi'(z) - (1 - Phi(z))), attained at z = sqrt(2),
    and C scales like kbar/(4 gamma) times the averaged slope of the
    derivative at zero offset (maximized over sigma_a).
    """
    if params.is_degenerate:
        raise DegenerateCase("existence bounds apply to sigma_minus < sigma_plus only")
    _require_solvable(fees)
    _require_rho_bound(params)
    sm, sp, rho = params.sigma_minus, params.sigma_plus, params.rho

    if isinstance(fees, SpreadQuad):
        b = (1.0 - rho * sp / sm) / (1.0 - (sm / sp) ** 2)
        lam = 1.0 / (2.0 * b + 1.0)
        c = 2.0 * lam * b * math.sqrt(0.5 * (1.0 - rho * rho) ** 2 * sm**4 / sp**2)
        u = c / (_SQRT2 * sp)
        gamma_min = (1.0 - norm_cdf(u)) / (4.0 * c) + norm_pdf(u) / (2.0 * _SQRT2 * sm)
        return c, gamma_min

    z = _SQRT2
    gamma_min = 0.5 * fees.kbar * (z * norm_pdf(z) - (1.0 - norm_cdf(z)))
    nodes, w = average_nodes(params)
    best = 0.0
    for sa in np.linspace(sm, sp, 33):
        sig = sigma_rho(float(sa), nodes, rho)
        q = q_rho(float(sa), nodes, rho)
        best = max(best, float(np.dot(w, sig * q)))
    c = fees.kbar / (4.0 * fees.gamma) * best * norm_pdf(0.0)
    return c, gamma_min


def best_response(
    delta: Strategy, params: MarketParams, fees: FeeScheme, cfg: SolverConfig = SolverConfig()
) -> Strategy:
    """Pointwise argmax strategy against ``delta`` on the same grid.

    The search interval is [0, hi] where hi doubles from
    ``cfg.search_cap`` until the payoff derivative turns negative (it
    always does: the derivative tends to minus infinity).  NonConcave
    from the kernel propagates.
    """
    _require_rho_bound(params)
    rule = default_rule(params, cfg.quad_n)
    argmax_tol = max(cfg.tol * 1e-3, 1e-13)
    out = np.empty(delta.grid.shape)
    for i, sa in enumerate(delta.grid):
        ctx = PayoffContext(float(sa), delta, params, fees, rule)

        def dfun(x: float, ctx=ctx) -> float:
            return payoff_deriv(x, ctx)

        hi = cfg.search_cap
        for _ in range(_MAX_DOUBLINGS):
            if dfun(hi) < 0.0:
                break
            hi *= 2.0
        else:
            raise BracketFailure(
                f"payoff derivative never turned negative below {hi} (sigma_a={sa})"
            )
        x, _ = maximize_concave(
            lambda x, ctx=ctx: penalized_payoff(x, ctx), dfun, 0.0, hi, tol=argmax_tol
        )
        out[i] = x
    return Strategy(delta.grid, out)


def _concavity_ok(
    delta: Strategy,
    params: MarketParams,
    fees: FeeScheme,
    cfg: SolverConfig,
    bound_c: float,
) -> bool:
    """Sample the second derivative on (0, bound_C) for negativity."""
    if not bound_c > 0.0 or not math.isfinite(bound_c):
        return False
    rule = default_rule(params, cfg.quad_n)
    xs = np.linspace(0.0, bound_c, 52)[1:-1]
    for sa in np.linspace(params.sigma_minus, params.sigma_plus, 11):
        ctx = PayoffContext(float(sa), delta, params, fees, rule)
        for x in xs:
            if payoff_second_deriv(float(x), ctx) >= 0.0:
                return False
    return True


def solve_fixed_point(
    params: MarketParams,
    fees: FeeScheme,
    cfg: SolverConfig = SolverConfig(),
    init: Strategy | None = None,
) -> EquilibriumReport:
    """Damped Picard iteration on the best-response operator.

    The iterate starts at the constant C/2 when gamma clears the
    analytic threshold, otherwise at the degenerate-market root for
    sigma_plus (the analytic threshold is far from tight, and fixed
    points routinely exist below it).  Non-convergence and concavity
    flags are reported, never silently accepted; if the kernel flags a
    non-concave payoff the run is returned with converged=False rather
    than raised.
    """
    _require_solvable(fees)
    _require_rho_bound(params)
    gamma = _scheme_gamma(fees)

    if params.is_degenerate:
        grid = uniform_grid(params)
        root = _degenerate_root(fees, params.sigma_plus, params.rho)
        bound_c, gamma_min = 2.0 * root, 0.0
        start = root
    else:
        grid = uniform_grid(params, cfg.grid_n)
        bound_c, gamma_min = existence_bound(params, fees)
        if gamma >= gamma_min:
            start = 0.5 * bound_c
        else:
            start = _degenerate_root(fees, params.sigma_plus, params.rho)

    delta = init if init is not None else Strategy(grid, np.full(grid.shape, start))
    if init is not None and (init.grid.shape != grid.shape or not np.allclose(init.grid, grid)):
        raise DomainError("initial strategy grid does not match the solver grid")

    residual = math.inf
    converged = False
    iterations = 0
    nonconcave = False
    for iterations in range(1, cfg.max_iter + 1):
        try:
            br = best_response(delta, params, fees, cfg)
        except NonConcave:
            nonconcave = True
            break
        residual = float(np.max(np.abs(br.values - delta.values)))
        if residual <= cfg.tol:
            converged = True
            break
        mixed = (1.0 - cfg.damping) * delta.values + cfg.damping * br.values
        delta = Strategy(grid, mixed)

    concavity = (not nonconcave) and _concavity_ok(delta, params, fees, cfg, bound_c)
    return EquilibriumReport(
        strategy=delta,
        residual=residual,
        iterations=iterations,
        converged=converged,
        bound_C=bound_c,
        gamma_min=gamma_min,
        concavity_ok=concavity,
    )


def no_ne_certificate(delta: Strategy, params: MarketParams, n: int = 64) -> float:
    """Normalized double average of (1/2)(1 - Phi((d_a + d_b)/Sigma_rho)).

    Strictly positive for every finite strategy, which certifies that no
    finite strategy can satisfy the aggregated unpenalized first-order
    condition: an unpenalized equilibrium would force this integral to
    zero.
    """
    nodes, w = average_nodes(params, n)
    dvals = np.asarray(delta(nodes), dtype=float)
    sa = nodes[:, None]
    sb = nodes[None, :]
    sig = np.sqrt(sa * sa + sb * sb - 2.0 * params.rho * sa * sb)
    integrand = 0.5 * (1.0 - norm_cdf((dvals[:, None] + dvals[None, :]) / sig))
    return float(np.sum((w[:, None] * w[None, :]) * integrand))


def verify_ne(
    delta: Strategy,
    params: MarketParams,
    fees: FeeScheme,
    x_samples: int = 256,
    quad_n: int = 64,
) -> float:
    """Largest deviation gain over sampled quote offsets.

    Scans x in [0, 3 * max(delta)] at every grid sigma_a and returns the
    maximum of payoff(x) - payoff(delta(sigma_a)), floored at zero.  A
    true equilibrium yields a value at solver-tolerance level.
    """
    if x_samples < 2:
        raise DomainError("x_samples must be >= 2")
    hi = 3.0 * delta.max_value()
    if not hi > 0.0:
        hi = 1.0
    xs = np.linspace(0.0, hi, x_samples)
    rule = default_rule(params, quad_n)
    worst = -math.inf
    for i, sa in enumerate(delta.grid):
        ctx = PayoffContext(float(sa), delta, params, fees, rule)
        held = penalized_payoff(float(delta.values[i]), ctx)
        best = max(penalized_payoff(float(x), ctx) for x in xs)
        worst = max(worst, best - held)
    return max(worst, 0.0)


def refine_config(cfg: SolverConfig, quad_factor: int = 2) -> SolverConfig:
    """Copy of ``cfg`` with a quadrature rule of ``quad_factor`` times the order."""
    return replace(cfg, quad_n=cfg.quad_n * quad_factor)
