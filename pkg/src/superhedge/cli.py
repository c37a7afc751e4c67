"""Batch front-end: config parsing, experiment orchestration, file outputs.

A run prices the configured claims, simulates the hedge over seeded
scenarios, and writes a per-strike statistics table (aligned text plus
delimited data), optional fixed-width histogram files and an optional
per-path dump.  Configs are flat ``key = value`` text; every CLI flag maps
onto a config key so runs are fully reproducible from the echoed config.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .pricing import (
    AipViolationError,
    MarketModel,
    StepSpec,
    asian_call_payoff,
    asian_tree_price,
    backward_induce,
    check_aip,
    initial_premium,
)
from .pwl import PwlFunction, call_payoff, put_payoff
from .simulation import (
    RngConfig,
    SimStats,
    simulate_functional,
    simulate_one,
    write_path_dump,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_ARBITRAGE = 2
EXIT_INFINITE_PRICE = 3

PAYOFF_TAGS = ("call", "put", "custom-pwl", "asian-call")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    s_prev: float = 100.0
    horizon: int = 2
    m_lo: float = 0.7
    m_hi: float = 1.0
    spr_lo: float = 0.0
    spr_hi: float = 0.4
    strikes: tuple[float, ...] = (50.0, 75.0, 100.0, 125.0, 150.0)
    n_paths: int = 1_000_000
    seed: int = 42
    payoff: str = "call"
    payoff_breakpoints: tuple[float, ...] = ()
    payoff_values: tuple[float, ...] = ()
    payoff_left_slope: float = 0.0
    payoff_right_slope: float = 0.0
    write_stats: bool = True
    dump_paths: bool = False
    histograms: bool = False
    export_strategy: bool = False
    hist_bins: int = 100
    straddle_to_ask: bool = True
    clamp_infinite_price: bool = False

    def __post_init__(self):
        if not self.s_prev > 0:
            raise ConfigError("s_prev must be positive")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if not self.strikes:
            raise ConfigError("strikes must be nonempty")
        if any(k <= 0 for k in self.strikes):
            raise ConfigError("strikes must be positive")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be at least 1")
        if self.payoff not in PAYOFF_TAGS:
            raise ConfigError(
                f"payoff must be one of {', '.join(PAYOFF_TAGS)}, got {self.payoff!r}"
            )
        if self.payoff == "custom-pwl":
            if not self.payoff_breakpoints:
                raise ConfigError("custom-pwl payoff needs payoff_breakpoints")
            if len(self.payoff_breakpoints) != len(self.payoff_values):
                raise ConfigError(
                    "payoff_breakpoints and payoff_values must have equal length"
                )
        if self.hist_bins < 1:
            raise ConfigError("hist_bins must be at least 1")

    def build_model(self) -> MarketModel:
        step = StepSpec.from_uniform(self.m_lo, self.m_hi, self.spr_lo, self.spr_hi)
        return MarketModel(
            s_init=self.s_prev,
            horizon=self.horizon,
            steps=(step,) * (self.horizon + 1),
        )


# ---------------------------------------------------------------------- #
# config text format
# ---------------------------------------------------------------------- #

_FLOAT_LIST_KEYS = {"strikes", "payoff_breakpoints", "payoff_values"}
_INT_KEYS = {"horizon", "n_paths", "seed", "hist_bins"}
_BOOL_KEYS = {
    "write_stats",
    "dump_paths",
    "histograms",
    "export_strategy",
    "straddle_to_ask",
    "clamp_infinite_price",
}
_STR_KEYS = {"payoff"}
_FLOAT_KEYS = {
    "s_prev",
    "m_lo",
    "m_hi",
    "spr_lo",
    "spr_hi",
    "payoff_left_slope",
    "payoff_right_slope",
}
# pseudo-keys: explicit essential bounds, normalised into the draw ranges
_BOUND_KEYS = {"k_down", "k_up"}
_ALL_KEYS = _FLOAT_LIST_KEYS | _INT_KEYS | _BOOL_KEYS | _STR_KEYS | _FLOAT_KEYS | _BOUND_KEYS


def _parse_value(key: str, value: str, lineno: int):
    try:
        if key in _FLOAT_LIST_KEYS:
            value = value.strip()
            if not value:
                return ()
            return tuple(float(v.strip()) for v in value.split(","))
        if key in _INT_KEYS:
            return int(value)
        if key in _BOOL_KEYS:
            low = value.strip().lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if key in _STR_KEYS:
            return value.strip()
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` lines; unknown keys are rejected.

    Blank lines and lines starting with ``#`` are ignored.  Setting
    ``k_down``/``k_up`` fixes the essential bounds directly: the draw ranges
    then default to m ~ U[k_down, k_up] with zero spread unless given
    explicitly, in which case they must be consistent
    (k_down == m_lo, k_up == m_hi + spr_hi).
    """
    fields: dict = {}
    bounds: dict = {}
    saw_dist_keys = False
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _ALL_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parsed = _parse_value(key, value, lineno)
        if key in _BOUND_KEYS:
            bounds[key] = parsed
            continue
        if key in ("m_lo", "m_hi", "spr_lo", "spr_hi"):
            saw_dist_keys = True
        if key in fields:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        fields[key] = parsed

    if bounds:
        if set(bounds) != _BOUND_KEYS:
            raise ConfigError("k_down and k_up must be given together")
        if not saw_dist_keys:
            fields["m_lo"] = bounds["k_down"]
            fields["m_hi"] = bounds["k_up"]
            fields["spr_lo"] = 0.0
            fields["spr_hi"] = 0.0
    try:
        cfg = ExperimentConfig(**fields)
        if bounds and saw_dist_keys:
            # raises when the explicit bounds contradict the draw ranges
            StepSpec(
                k_down=bounds["k_down"],
                k_up=bounds["k_up"],
                m_lo=cfg.m_lo,
                m_hi=cfg.m_hi,
                spr_lo=cfg.spr_lo,
                spr_hi=cfg.spr_hi,
            )
        return cfg
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def render_config(cfg: ExperimentConfig) -> str:
    """Config text that parses back to an equal ExperimentConfig."""
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in _FLOAT_LIST_KEYS:
            rendered = ", ".join(repr(x) for x in v)
        elif f.name in _BOOL_KEYS:
            rendered = "true" if v else "false"
        else:
            rendered = repr(v) if not isinstance(v, str) else v
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------- #
# output formatting
# ---------------------------------------------------------------------- #


def format_stats_text(stats: list[SimStats]) -> str:
    width = max(len(lbl) for lbl in SimStats.ROW_LABELS) + 2
    colw = 14
    rows = []
    table = [st.row_values() for st in stats]
    for i, label in enumerate(SimStats.ROW_LABELS):
        cells = "".join(f"{vals[i]:>{colw}.6g}" for vals in table)
        rows.append(f"{label:<{width}}{cells}")
    return "\n".join(rows) + "\n"


def format_stats_csv(stats: list[SimStats]) -> str:
    lines = []
    table = [st.row_values() for st in stats]
    for i, label in enumerate(SimStats.ROW_LABELS):
        cells = ",".join(repr(vals[i]) for vals in table)
        lines.append(f"{label},{cells}")
    return "\n".join(lines) + "\n"


def _write_histogram(path: Path, data: np.ndarray, bins: int):
    counts, edges = np.histogram(data, bins=bins)
    edges = [float(e) for e in edges]
    with path.open("w", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,count\n")
        for i, c in enumerate(counts):
            fh.write(f"{edges[i]!r},{edges[i + 1]!r},{int(c)}\n")


def _export_strategy_tables(out_dir, label, pricing, model, n_samples=512):
    """Per-step sampled order mappings z -> theta_t(z)."""
    lo_mult = 1.0
    hi_mult = 1.0
    for t in range(model.horizon):
        step = model.steps[t]
        lo_mult *= step.k_down
        hi_mult *= step.k_up
        lo = model.s_init * lo_mult
        hi = model.s_init * hi_mult
        grid = np.linspace(lo, hi, n_samples)
        theta = pricing.strategy(t, model)(grid)
        path = out_dir / f"strategy_{label}_t{t}.csv"
        with path.open("w", encoding="utf-8") as fh:
            fh.write("s,theta\n")
            for s_val, th in zip(grid, theta):
                fh.write(f"{float(s_val)!r},{float(th)!r}\n")


def _column_label(strike: float) -> str:
    if math.isnan(strike):
        return "custom"
    return f"K{strike:g}"


# ---------------------------------------------------------------------- #
# experiment runner
# ---------------------------------------------------------------------- #


def run_experiment(cfg: ExperimentConfig, out_dir: Path) -> int:
    """Run pricing + simulation per strike, write artifacts, return exit code."""
    try:
        model = cfg.build_model()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    aip = check_aip(model)
    if not aip.ok:
        t = aip.first_violation
        step = model.steps[t]
        condition = (
            f"k_down <= 1 <= k_up fails at step {t}: "
            f"1 not in [{step.k_down}, {step.k_up}]"
        )
        if cfg.clamp_infinite_price:
            print(
                "error: clamp_infinite_price is set, but the super-hedging "
                f"price is infinite because {condition}; aborting",
                file=sys.stderr,
            )
            return EXIT_INFINITE_PRICE
        print(f"error: no-arbitrage check failed: {condition}", file=sys.stderr)
        return EXIT_NO_ARBITRAGE

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "effective_config.txt").write_text(
        render_config(cfg), encoding="utf-8"
    )

    if cfg.payoff == "custom-pwl":
        columns = [math.nan]
    else:
        columns = [float(k) for k in cfg.strikes]

    collect = cfg.dump_paths or cfg.histograms
    children = RngConfig(cfg.seed).root_sequence().spawn(len(columns))

    stats_list: list[SimStats] = []
    try:
        for strike, child in zip(columns, children):
            label = _column_label(strike)
            if cfg.payoff == "asian-call":
                payoff_fn = asian_call_payoff(strike)
                v0 = asian_tree_price(payoff_fn, model, model.s_init)
                print(f"{label}: time-0 value at s0={model.s_init:g}: {v0:.6g}")
                stats, raw = simulate_functional(
                    model,
                    payoff_fn,
                    strike,
                    cfg.n_paths,
                    child,
                    cfg.straddle_to_ask,
                    collect=collect,
                )
            else:
                if cfg.payoff == "call":
                    payoff = call_payoff(strike)
                elif cfg.payoff == "put":
                    payoff = put_payoff(strike)
                else:
                    payoff = PwlFunction(
                        cfg.payoff_breakpoints,
                        cfg.payoff_values,
                        cfg.payoff_left_slope,
                        cfg.payoff_right_slope,
                    )
                pricing = backward_induce(payoff, model)
                premium = initial_premium(pricing, model)
                print(f"{label}: initial premium P0 = {premium:.6g}")
                if cfg.export_strategy:
                    _export_strategy_tables(out_dir, label, pricing, model)
                stats, raw = simulate_one(
                    model,
                    pricing,
                    strike,
                    cfg.n_paths,
                    child,
                    cfg.straddle_to_ask,
                    collect=collect,
                )
            stats_list.append(stats)

            if cfg.dump_paths:
                with (out_dir / f"paths_{label}.csv").open(
                    "w", encoding="utf-8"
                ) as fh:
                    write_path_dump(fh, raw, model.horizon)
            if cfg.histograms:
                hist_series = {"S_0": raw["s"][0]}
                if model.horizon >= 1:
                    hist_series["S_1"] = raw["s"][1]
                if model.horizon >= 2:
                    hist_series["S_2"] = raw["s"][2]
                hist_series["eps_R"] = raw["eps"]
                for name, data in hist_series.items():
                    _write_histogram(
                        out_dir / f"hist_{label}_{name}.csv", data, cfg.hist_bins
                    )
    except (AipViolationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    if cfg.write_stats:
        text = format_stats_text(stats_list)
        (out_dir / "stats.txt").write_text(text, encoding="utf-8")
        (out_dir / "stats.csv").write_text(
            format_stats_csv(stats_list), encoding="utf-8"
        )
        print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------- #
# entry point
# ---------------------------------------------------------------------- #


def build_arg_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="superhedge",
        description=(
            "Price claims under interval execution uncertainty and verify "
            "the hedge path-by-path over seeded scenarios."
        ),
    )
    p.add_argument("--config", type=Path, help="experiment config file")
    p.add_argument("--seed", type=int, help="override the RNG seed")
    p.add_argument("--paths", type=int, help="override the scenario count")
    p.add_argument("--strikes", type=str, help="override strikes, comma separated")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--dump-paths", action="store_true", help="write per-path records")
    p.add_argument("--histograms", action="store_true", help="write histogram files")
    p.add_argument(
        "--export-strategy",
        action="store_true",
        help="write sampled order mappings per step",
    )
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_arg_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        cfg = parse_config(text)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.paths is not None:
            overrides["n_paths"] = args.paths
        if args.strikes is not None:
            overrides["strikes"] = tuple(
                float(v.strip()) for v in args.strikes.split(",")
            )
        if args.dump_paths:
            overrides["dump_paths"] = True
        if args.histograms:
            overrides["histograms"] = True
        if args.export_strategy:
            overrides["export_strategy"] = True
        if overrides:
            cfg = replace(cfg, **overrides)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return run_experiment(cfg, args.out)


if __name__ == "__main__":
    sys.exit(main())
