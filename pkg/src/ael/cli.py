"""Command-line front end.

Configuration is flat ``key=value`` text with dotted section prefixes
(``market.sigma_minus=0.1``); any key can be overridden on the command
line with a flag of the same dotted name (``--market.sigma_minus 0.2``
or ``--market.sigma_minus=0.2``).  Outputs are CSV files with a
'#'-prefixed header block that echoes the full effective configuration
(itself valid config syntax), 17-significant-digit scientific notation
for floats, and no timestamps, so identical runs produce identical
bytes.

Subcommands: stats, solve-ne, optimal-fee, payoff-curve, simulate,
validate.  Exit codes: 0 success, 2 configuration error, 3 convergence
failure (or impossible scheme) under --strict, 4 validation failure.
stdout stays empty except for the validate report; progress goes to
stderr.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import equilibrium, exchange, simulator
from .errors import (
    AelError,
    BracketFailure,
    ConfigError,
    NoConvergence,
    NoEquilibrium,
    NonConcave,
    WrongScheme,
)
from .gaussmath import norm_cdf, norm_pdf
from .model import (
    FeeScheme,
    LinearDemand,
    MarketParams,
    MidQuad,
    NoFee,
    SpreadQuad,
    Strategy,
    analytic_stats,
    default_rule,
    uniform_grid,
)
from .payoff import PayoffContext, payoff_deriv, penalized_payoff
from .simulator import SimConfig, estimate_limit_payoff, estimate_stats


# --- configuration schema ---------------------------------------------------


def _p_float(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise ConfigError(f"expected a number, got {s!r}")
    if not math.isfinite(v):
        raise ConfigError(f"expected a finite number, got {s!r}")
    return v


def _p_float_or_inf(s: str) -> float:
    if s.strip().lower() in ("inf", "infinite", "infinity"):
        return math.inf
    return _p_float(s)


def _p_int(s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ConfigError(f"expected an integer, got {s!r}")


def _p_str(s: str) -> str:
    return s


def _p_float_list(s: str) -> tuple[float, ...]:
    s = s.strip()
    if not s:
        return ()
    return tuple(_p_float(tok) for tok in s.split(","))


_SCHEMA: dict[str, tuple] = {
    "market.sigma_minus": (_p_float, 0.1),
    "market.sigma_plus": (_p_float, 1.1),
    "market.rho": (_p_float, 0.0),
    "market.v": (_p_float_or_inf, math.inf),
    "fees.scheme": (_p_str, "spread_quad"),
    "fees.gamma": (_p_float, 2.0),
    "fees.kbar": (_p_float, 1.0),
    "solver.grid_n": (_p_int, 101),
    "solver.damping": (_p_float, 0.5),
    "solver.tol": (_p_float, 1e-7),
    "solver.max_iter": (_p_int, 200),
    "solver.search_cap": (_p_float, 1.0),
    "solver.quad_n": (_p_int, 64),
    "sim.samples": (_p_int, 1000000),
    "sim.seed": (_p_int, 12345),
    "sim.v_mode": (_p_str, "infinite"),
    "sim.v": (_p_float, 1.0),
    "strategy.constant": (_p_float, 0.0),
    "strategy.file": (_p_str, ""),
    "strategy.column": (_p_str, ""),
    "solve.gammas": (_p_float_list, ()),
    "sweep.gammas": (_p_float_list, ()),
    "sweep.gamma_min": (_p_float, 1.5),
    "sweep.gamma_max": (_p_float, 5.0),
    "sweep.count": (_p_int, 20),
    "curve.x_min": (_p_float, -0.5),
    "curve.x_max": (_p_float, 1.5),
    "curve.n": (_p_int, 201),
    "curve.sigma_a": (_p_str, "mid"),
    "validate.samples": (_p_int, 200000),
    "verify.x_samples": (_p_int, 256),
    "output.path": (_p_str, "out.csv"),
}

_SCHEMES = {"none", "mid_quad", "spread_quad", "linear_demand"}


def _canon(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    if isinstance(value, tuple):
        return ",".join(_canon(v) for v in value)
    return str(value)


def parse_config_text(text: str, source: str) -> dict[str, str]:
    """Raw key=value pairs from config text, with line diagnostics."""
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{ln}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{ln}: unknown key {key!r}")
        out[key] = value
    return out


@dataclass
class RunConfig:
    """Effective, type-checked configuration for one command."""

    values: dict

    @classmethod
    def build(cls, config_path: str | None, overrides: list[tuple[str, str]]) -> "RunConfig":
        raw: dict[str, str] = {}
        if config_path:
            try:
                with open(config_path, "r", encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config file {config_path}: {exc}")
            raw.update(parse_config_text(text, config_path))
        for key, value in overrides:
            if key not in _SCHEMA:
                raise ConfigError(f"command line: unknown key {key!r}")
            raw[key] = value
        values = {}
        for key, (parse, default) in _SCHEMA.items():
            if key in raw:
                try:
                    values[key] = parse(raw[key])
                except ConfigError as exc:
                    raise ConfigError(f"key {key}: {exc}")
            else:
                values[key] = default
        if values["fees.scheme"] not in _SCHEMES:
            raise ConfigError(
                f"key fees.scheme: expected one of {sorted(_SCHEMES)}, "
                f"got {values['fees.scheme']!r}"
            )
        if values["sim.v_mode"] not in ("infinite", "finite"):
            raise ConfigError("key sim.v_mode: expected 'infinite' or 'finite'")
        return cls(values)

    def __getitem__(self, key: str):
        return self.values[key]

    def market(self) -> MarketParams:
        try:
            return MarketParams(
                sigma_minus=self["market.sigma_minus"],
                sigma_plus=self["market.sigma_plus"],
                rho=self["market.rho"],
                v=self["market.v"],
            )
        except AelError as exc:
            raise ConfigError(f"market parameters: {exc}")

    def fees(self, gamma: float | None = None) -> FeeScheme:
        scheme = self["fees.scheme"]
        g = self["fees.gamma"] if gamma is None else gamma
        try:
            if scheme == "none":
                return NoFee()
            if scheme == "mid_quad":
                return MidQuad(g)
            if scheme == "spread_quad":
                return SpreadQuad(g)
            return LinearDemand(kbar=self["fees.kbar"], gamma=g)
        except AelError as exc:
            raise ConfigError(f"fee parameters: {exc}")

    def solver(self) -> equilibrium.SolverConfig:
        try:
            return equilibrium.SolverConfig(
                grid_n=self["solver.grid_n"],
                damping=self["solver.damping"],
                tol=self["solver.tol"],
                max_iter=self["solver.max_iter"],
                search_cap=self["solver.search_cap"],
                quad_n=self["solver.quad_n"],
            )
        except AelError as exc:
            raise ConfigError(f"solver parameters: {exc}")

    def sim(self, samples: int | None = None) -> SimConfig:
        v = math.inf if self["sim.v_mode"] == "infinite" else self["sim.v"]
        try:
            return SimConfig(
                samples=self["sim.samples"] if samples is None else samples,
                seed=self["sim.seed"],
                v=v,
            )
        except AelError as exc:
            raise ConfigError(f"simulation parameters: {exc}")

    def strategy(self, market: MarketParams) -> Strategy:
        path = self["strategy.file"]
        if path:
            return load_strategy_csv(path, self["strategy.column"])
        try:
            return Strategy.constant(
                self["strategy.constant"], market, self["solver.grid_n"]
            )
        except AelError as exc:
            raise ConfigError(f"strategy: {exc}")

    def config_lines(self) -> list[str]:
        return [f"{key}={_canon(self.values[key])}" for key in sorted(self.values)]


def load_strategy_csv(path: str, column: str = "") -> Strategy:
    """Strategy from a prior solve-ne output (sigma plus a delta column)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read strategy file {path}: {exc}")
    if len(lines) < 2:
        raise ConfigError(f"strategy file {path} has no data rows")
    header = lines[0].split(",")
    if "sigma" not in header:
        raise ConfigError(f"strategy file {path} lacks a 'sigma' column")
    si = header.index("sigma")
    if column:
        if column not in header:
            raise ConfigError(f"strategy file {path} lacks column {column!r}")
        di = header.index(column)
    else:
        candidates = [i for i, name in enumerate(header) if name.startswith("delta")]
        if not candidates:
            raise ConfigError(f"strategy file {path} lacks a delta column")
        di = candidates[0]
    sigmas, deltas = [], []
    for ln in lines[1:]:
        cells = ln.split(",")
        try:
            sigmas.append(float(cells[si]))
            deltas.append(float(cells[di]))
        except (ValueError, IndexError):
            raise ConfigError(f"strategy file {path}: malformed row {ln!r}")
    try:
        return Strategy(np.array(sigmas), np.array(deltas))
    except AelError as exc:
        raise ConfigError(f"strategy file {path}: {exc}")


# --- CSV emission -----------------------------------------------------------


def _fmt_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


def write_csv(path, command, cfg, header, rows, footer=()):
    lines = [f"# ael {command}"]
    lines += [f"# {line}" for line in cfg.config_lines()]
    lines.append(",".join(header))
    lines += [",".join(_fmt_cell(c) for c in row) for row in rows]
    lines += [f"# {line}" for line in footer]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise ConfigError(f"cannot write output file {path}: {exc}")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# --- subcommands ------------------------------------------------------------

_STAT_COLS = ("spread_mean", "spread_var", "mid_error_mean", "mid_error_var", "trade_prob")


def cmd_stats(cfg: RunConfig, simulate: bool) -> int:
    market = cfg.market()
    delta = cfg.strategy(market)
    stats = analytic_stats(delta, market, default_rule(market, cfg["solver.quad_n"]))
    header = list(_STAT_COLS)
    row = [stats.spread_mean, stats.spread_var, stats.mid_error_mean,
           stats.mid_error_var, stats.trade_prob]
    if simulate:
        rep = estimate_stats(delta, market, cfg.sim())
        header += ["emp_" + c for c in _STAT_COLS] + ["se_" + c for c in _STAT_COLS]
        row += [rep.stats.spread_mean, rep.stats.spread_var, rep.stats.mid_error_mean,
                rep.stats.mid_error_var, rep.stats.trade_prob]
        row += list(rep.std_errors)
    write_csv(cfg["output.path"], "stats", cfg, header, [row])
    return 0


def cmd_solve_ne(cfg: RunConfig, strict: bool) -> int:
    market = cfg.market()
    scheme = cfg["fees.scheme"]
    if scheme in ("none", "mid_quad"):
        _log(f"ael solve-ne: no equilibrium exists under scheme '{scheme}'")
        return 3
    solver = cfg.solver()
    gammas = cfg["solve.gammas"] or (cfg["fees.gamma"],)
    grid = uniform_grid(market, solver.grid_n)
    columns, footer = [], []
    all_converged = True
    for g in gammas:
        _log(f"ael solve-ne: solving gamma={g:g}")
        report = equilibrium.solve_fixed_point(market, cfg.fees(gamma=g), solver)
        columns.append(np.asarray(report.strategy(grid), dtype=float))
        tag = f"gamma_{g:g}"
        footer += [
            f"residual_{tag}={report.residual:.16e}",
            f"iterations_{tag}={report.iterations}",
            f"converged_{tag}={'true' if report.converged else 'false'}",
            f"concavity_ok_{tag}={'true' if report.concavity_ok else 'false'}",
        ]
        all_converged &= report.converged
    header = ["sigma"] + [f"delta_gamma_{g:g}" for g in gammas]
    rows = [[grid[i]] + [col[i] for col in columns] for i in range(grid.size)]
    write_csv(cfg["output.path"], "solve-ne", cfg, header, rows, footer)
    if strict and not all_converged:
        _log("ael solve-ne: at least one gamma failed to converge")
        return 3
    return 0


def cmd_optimal_fee(cfg: RunConfig, strict: bool) -> int:
    market = cfg.market()
    grid = cfg["sweep.gammas"] or tuple(
        np.linspace(cfg["sweep.gamma_min"], cfg["sweep.gamma_max"], cfg["sweep.count"])
    )
    footer = []
    if market.is_degenerate:
        res = exchange.optimal_gamma_degenerate(market.sigma_plus, market.rho)
        footer += [
            f"closed_form.y_star={res.y_star:.16e}",
            f"closed_form.gamma_star={res.gamma_star:.16e}",
            f"closed_form.delta_star={res.delta_star:.16e}",
            f"closed_form.revenue={res.revenue:.16e}",
        ]
    points = exchange.revenue_curve(grid, market, cfg.solver())
    rows = [[p.gamma, p.revenue, p.converged] for p in points]
    write_csv(cfg["output.path"], "optimal-fee", cfg, ["gamma", "revenue", "converged"], rows, footer)
    if strict and not all(p.converged for p in points):
        _log("ael optimal-fee: at least one gamma failed to converge")
        return 3
    return 0


def cmd_payoff_curve(cfg: RunConfig) -> int:
    market = cfg.market()
    delta = cfg.strategy(market)
    sig_raw = cfg["curve.sigma_a"]
    if sig_raw == "mid":
        sigma_a = 0.5 * (market.sigma_minus + market.sigma_plus)
    else:
        sigma_a = _p_float(sig_raw)
    ctx = PayoffContext(sigma_a, delta, market, cfg.fees(),
                        default_rule(market, cfg["solver.quad_n"]))
    xs = np.linspace(cfg["curve.x_min"], cfg["curve.x_max"], cfg["curve.n"])
    rows = [[x, penalized_payoff(float(x), ctx), payoff_deriv(float(x), ctx)] for x in xs]
    write_csv(cfg["output.path"], "payoff-curve", cfg, ["x", "payoff", "deriv"], rows)
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    market = cfg.market()
    delta = cfg.strategy(market)
    rep = estimate_stats(delta, market, cfg.sim())
    header = ["emp_" + c for c in _STAT_COLS] + ["se_" + c for c in _STAT_COLS] + ["samples", "seed"]
    row = [rep.stats.spread_mean, rep.stats.spread_var, rep.stats.mid_error_mean,
           rep.stats.mid_error_var, rep.stats.trade_prob]
    row += list(rep.std_errors) + [rep.samples, rep.seed]
    write_csv(cfg["output.path"], "simulate", cfg, header, [row])
    return 0


# --- validation suite -------------------------------------------------------


def _check_rho_bound(cfg, market):
    ok = market.rho_bound_ok
    bound = market.sigma_minus / market.sigma_plus
    detail = f"rho={market.rho:g} bound={bound:.6g}"
    if not ok:
        detail += " (equilibrium assumption rho <= sigma_minus/sigma_plus violated)"
    return ok, detail


def _check_derivative_fd(cfg, market):
    rng = np.random.default_rng(2024)
    schemes = [NoFee(), SpreadQuad(2.0), MidQuad(0.5), LinearDemand(1.0, 0.3)]
    delta = Strategy.constant(0.3, market, 51)
    rule = default_rule(market)
    h, worst = 1e-4, 0.0
    for fees in schemes:
        for _ in range(12):
            sa = rng.uniform(market.sigma_minus, market.sigma_plus)
            x = rng.uniform(0.0, 1.5)
            ctx = PayoffContext(sa, delta, market, fees, rule)
            fd = (penalized_payoff(x + h, ctx) - penalized_payoff(x - h, ctx)) / (2 * h)
            worst = max(worst, abs(payoff_deriv(x, ctx) - fd))
    return worst <= 1e-6, f"max_err={worst:.3e} (tol 1e-06)"


def _check_payoff_mc(cfg, market):
    from .payoff import base_payoff

    delta = Strategy.constant(0.3, market, 51)
    rule = default_rule(market)
    sim = SimConfig(samples=cfg["validate.samples"], seed=cfg["sim.seed"])
    worst = 0.0
    for i, (x, frac) in enumerate([(0.1, 0.2), (0.4, 0.5), (0.8, 0.9)]):
        sa = market.sigma_minus + frac * (market.sigma_plus - market.sigma_minus)
        ctx = PayoffContext(sa, delta, market, NoFee(), rule)
        ref = base_payoff(x, ctx)
        sim_i = SimConfig(samples=sim.samples, seed=sim.seed + i)
        mean, se = estimate_limit_payoff(x, sa, delta, market, sim_i)
        worst = max(worst, abs(mean - ref) / max(se, 1e-300))
    return worst <= 4.0, f"max_dev={worst:.2f} SE (tol 4)"


def _check_stats_mc(cfg, market):
    delta = cfg.strategy(market)
    stats = analytic_stats(delta, market, default_rule(market, cfg["solver.quad_n"]))
    rep = estimate_stats(delta, market, cfg.sim(samples=cfg["validate.samples"]))
    ana = [stats.spread_mean, stats.spread_var, stats.mid_error_mean,
           stats.mid_error_var, stats.trade_prob]
    emp = [rep.stats.spread_mean, rep.stats.spread_var, rep.stats.mid_error_mean,
           rep.stats.mid_error_var, rep.stats.trade_prob]
    worst = max(
        abs(e - a) / max(se, 1e-300)
        for a, e, se in zip(ana, emp, rep.std_errors)
    )
    return worst <= 4.0, f"max_dev={worst:.2f} SE (tol 4)"


def _check_degenerate_consistency(cfg, market):
    if not market.rho_bound_ok:
        return False, "skipped: rho exceeds sigma_minus/sigma_plus (assumption violated)"
    gamma = cfg["fees.gamma"] if cfg["fees.scheme"] == "spread_quad" else 2.0
    sp = market.sigma_plus
    near = MarketParams(sp - 1e-6, sp, market.rho)
    exact = MarketParams(sp, sp, market.rho)
    fees = SpreadQuad(gamma)
    root = equilibrium.solve_degenerate(exact, fees)
    solver = cfg.solver()
    report = equilibrium.solve_fixed_point(near, fees, solver)
    gap = float(np.max(np.abs(report.strategy.values - root)))
    ok = report.converged and gap <= 1e-5
    return ok, f"gap={gap:.3e} converged={report.converged} (tol 1e-05)"


def _check_certificate(cfg, market):
    zero = Strategy.constant(0.0, market, 31)
    c0 = equilibrium.no_ne_certificate(zero, market)
    shifted = Strategy.constant(0.5, market, 31)
    c1 = equilibrium.no_ne_certificate(shifted, market)
    ok = abs(c0 - 0.25) <= 1e-10 and c1 > 0.0
    return ok, f"cert(0)={c0:.12f} cert(0.5)={c1:.6f}"


def _check_no_ne_gain(cfg, market):
    if not market.rho_bound_ok:
        return False, "skipped: rho exceeds sigma_minus/sigma_plus (assumption violated)"
    delta = Strategy.constant(0.3, market, 31)
    gain = equilibrium.verify_ne(delta, market, NoFee(), x_samples=cfg["verify.x_samples"])
    return gain > 0.0, f"deviation_gain={gain:.6f} (must be > 0)"


_CHECKS = [
    ("rho_assumption", _check_rho_bound),
    ("derivative_fd", _check_derivative_fd),
    ("payoff_mc", _check_payoff_mc),
    ("stats_mc", _check_stats_mc),
    ("degenerate_consistency", _check_degenerate_consistency),
    ("certificate", _check_certificate),
    ("no_ne_deviation_gain", _check_no_ne_gain),
]


def cmd_validate(cfg: RunConfig) -> int:
    market = cfg.market()
    all_ok = True
    lines = []
    for name, fn in _CHECKS:
        try:
            ok, detail = fn(cfg, market)
        except AelError as exc:
            ok, detail = False, f"error: {exc}"
        all_ok &= ok
        lines.append(f"{name:<26} {'PASS' if ok else 'FAIL':<5} {detail}")
    lines.append(f"OVERALL: {'PASS' if all_ok else 'FAIL'}")
    print("\n".join(lines))
    return 0 if all_ok else 4


# --- argument handling ------------------------------------------------------


def _parse_overrides(extras: list[str]) -> list[tuple[str, str]]:
    out = []
    i = 0
    while i < len(extras):
        tok = extras[i]
        if not tok.startswith("--"):
            raise ConfigError(f"command line: unexpected argument {tok!r}")
        body = tok[2:]
        if "=" in body:
            key, value = body.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extras):
                raise ConfigError(f"command line: missing value for --{body}")
            key, value = body, extras[i + 1]
            i += 2
        out.append((key, value))
    return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ael",
        description="Double-auction quoting game: equilibria, fee design, validation.",
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("stats", "solve-ne", "optimal-fee", "payoff-curve", "simulate", "validate"):
        p = sub.add_parser(name, allow_abbrev=False)
        p.add_argument("-c", "--config", default=None, help="config file path")
        p.add_argument("-o", "--output", default=None, help="output CSV path")
        p.add_argument("--strict", action="store_true",
                       help="exit 3 when any requested solve fails to converge")
        p.add_argument("--samples", type=int, default=None, help="override sim.samples")
        p.add_argument("--seed", type=int, default=None, help="override sim.seed")
        if name == "stats":
            p.add_argument("--simulate", action="store_true",
                           help="append Monte Carlo columns")
    return parser


def main(argv=None) -> int:
    args, extras = _build_parser().parse_known_args(argv)
    try:
        overrides = _parse_overrides(extras)
        if args.samples is not None:
            overrides.append(("sim.samples", str(args.samples)))
        if args.seed is not None:
            overrides.append(("sim.seed", str(args.seed)))
        if args.output is not None:
            overrides.append(("output.path", args.output))
        cfg = RunConfig.build(args.config, overrides)
        if args.command == "stats":
            return cmd_stats(cfg, args.simulate)
        if args.command == "solve-ne":
            return cmd_solve_ne(cfg, args.strict)
        if args.command == "optimal-fee":
            return cmd_optimal_fee(cfg, args.strict)
        if args.command == "payoff-curve":
            return cmd_payoff_curve(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_validate(cfg)
    except ConfigError as exc:
        _log(f"ael: config error: {exc}")
        return 2
    except (NoEquilibrium, NoConvergence, BracketFailure, NonConcave, WrongScheme) as exc:
        _log(f"ael: {exc}")
        return 3
    except AelError as exc:
        _log(f"ael: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
