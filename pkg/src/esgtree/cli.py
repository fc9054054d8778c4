"""Command-line front end: ``esgtree <command> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from . import calibration as cal
from .errors import DomainError, InputError, NumericalError
from .formats import (
    SURFACE_KINDS,
    PriceSeries,
    RunConfig,
    _floats,
    chain_to_quotes,
    csv_text,
    fmt,
    load_config,
    read_esg_csv,
    read_option_chain,
    read_price_csv,
    sha256_file,
    surface_csv,
    write_outputs,
)
from .informed import (
    InfoSpec,
    informed_dividend_yield,
    informed_params,
    price_informed,
    simulate_informed_strategy,
    strategy_branches,
)
from .lattice import LatticeSpec, Payoff, arith_moves, esg_dividend_yield, log_moves, price_european
from .pathdep import EtaCoeffs, fit_coeffs, pd_price_european, standardize_driver
from .returns import (
    Convention,
    EsgSeries,
    ModelParams,
    align_esg,
    blend_returns,
    build_index,
    estimate_params,
    financial_returns,
    numeraire_prices,
    series_stats,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3


# --------------------------------------------------------------------------
# Input assembly
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AssetHistory:
    """Step-dated financial returns and aligned normalized ESG for one asset."""

    prices: PriceSeries
    dates: tuple
    r0: np.ndarray
    e: np.ndarray
    convention: Convention

    def at(self, lam: float) -> EsgSeries:
        return blend_returns(self.r0, self.e, lam, self.convention, self.dates)


def load_history(price_path, esg_path, cfg: RunConfig) -> AssetHistory:
    prices = read_price_csv(price_path)
    records = read_esg_csv(esg_path, cfg.esg_min, cfg.esg_max)
    step_dates = prices.dates[1:]
    r0 = financial_returns(prices.closes, cfg.convention)
    e = align_esg(step_dates, records, cfg.c, cfg.esg_min, cfg.esg_max)
    return AssetHistory(prices, step_dates, r0, e, cfg.convention)


def driver_at(components: Sequence[AssetHistory], lam: float, cfg: RunConfig):
    index = build_index([h.at(lam) for h in components])
    return standardize_driver(index.r_lambda, cfg.dt, window=cfg.window or None, ddof=cfg.ddof)


def _load_components(price_paths, esg_paths, cfg):
    if not price_paths:
        raise InputError("the path-dependent model needs --driver-prices/--driver-esg")
    if len(price_paths) != len(esg_paths):
        raise InputError("give one --driver-esg file per --driver-prices file")
    comps = [load_history(p, e, cfg) for p, e in zip(price_paths, esg_paths)]
    if any(c.dates != comps[0].dates for c in comps):
        raise InputError("driver components are not on the same dates")
    return comps


def _lam_label(lam: float) -> str:
    return f"{lam:g}"


def _input_hashes(args, names: Sequence[str]) -> dict:
    out = {}
    for name in names:
        value = getattr(args, name, None)
        for path in ([value] if isinstance(value, str) else value or []):
            out[Path(path).name] = sha256_file(path)
    return dict(sorted(out.items()))


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_esg_price(args, cfg: RunConfig) -> dict[str, str]:
    hist = load_history(args.prices, args.esg, cfg)
    columns = [np.concatenate(([1.0], numeraire_prices(hist.at(lam), 1.0))) for lam in cfg.lambdas]
    rows = [
        (hist.prices.dates[i].isoformat(), *[col[i] for col in columns])
        for i in range(len(hist.prices.dates))
    ]
    header = ["date"] + [f"lambda={_lam_label(l)}" for l in cfg.lambdas]
    text = csv_text(header, rows, comment=f"config_sha256={cfg.sha256()}")
    print(f"wrote {len(rows)} rows for {len(cfg.lambdas)} lambda value(s)")
    return {"esg_prices.csv": text}


def cmd_estimate(args, cfg: RunConfig) -> dict[str, str]:
    hist = load_history(args.prices, args.esg, cfg)
    header = ["lambda", "convention", "mu", "sigma", "p", "mean", "stdev", "sharpe", "mdd"]
    rows = []
    for lam in cfg.lambdas:
        series = hist.at(lam)
        prm = estimate_params(series, cfg.dt, ddof=cfg.ddof)
        st = series_stats(series, cfg.rf_annual, cfg.dt, ddof=cfg.ddof)
        rows.append((lam, cfg.convention.value, prm.mu, prm.sigma, prm.p, st.mean, st.stdev, st.sharpe, st.mdd))
    text = csv_text(header, rows, comment=f"config_sha256={cfg.sha256()}")
    print(text, end="")
    return {"params.csv": text}


def _params_from_args(args, cfg: RunConfig, lam: float) -> ModelParams:
    if args.params:
        table = read_params_csv(args.params)
        if lam not in table:
            raise InputError(f"{args.params}: no row for lambda={lam:g}")
        return table[lam].replace(convention=cfg.convention)
    if args.mu is None or args.sigma is None or args.p is None:
        raise InputError("give --params or all of --mu, --sigma, --p")
    return ModelParams(args.mu, args.sigma, args.p, cfg.convention)


def read_params_csv(path) -> dict[float, ModelParams]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    if not lines or not lines[0].startswith("lambda,convention,mu,sigma,p"):
        raise InputError(f"{path}: not a parameter table")
    table = {}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        try:
            table[float(parts[0])] = ModelParams(float(parts[2]), float(parts[3]), float(parts[4]), parts[1])
        except (ValueError, IndexError) as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    return table


def cmd_price(args, cfg: RunConfig) -> dict[str, str]:
    lam = cfg.lambdas[0]
    steps = args.steps or cfg.steps
    payoff = Payoff.PUT if args.put else Payoff.CALL
    spec = LatticeSpec(args.spot, args.strike, steps, cfg.dt, cfg.rf_annual, payoff)
    report: dict[str, object] = {"model": cfg.model, "convention": cfg.convention.value, "lambda": lam}

    if cfg.model == "pathdep":
        if args.coeffs is None or args.mu is None:
            raise InputError("the path-dependent model needs --mu and --coeffs c1,c2,c3")
        c = _floats(args.coeffs)
        if len(c) != 3:
            raise InputError("--coeffs needs three values")
        comps = _load_components(args.driver_prices, args.driver_esg, cfg)
        driver = driver_at(comps, lam, cfg)
        coeffs = EtaCoeffs(*c, shape_h=cfg.df, shape_g=cfg.df, kind=cfg.shape_kind)
        res = pd_price_european(spec, args.mu, coeffs, driver, cfg.convention)
    else:
        params = _params_from_args(args, cfg, lam)
        if cfg.model == "informed":
            info = InfoSpec(cfg.delta)
            res = price_informed(spec, params, info)
            report["dividend_yield"] = informed_dividend_yield(params, info, cfg.rf_annual)
            report["n_max"] = informed_params(params, info, cfg.rf_annual).n_max
        else:
            res = price_european(spec, params)
            if args.params and lam != 0.0:
                base = _params_from_args(args, cfg, 0.0)
                report["dividend_yield"] = esg_dividend_yield(params, base, cfg.rf_annual)
    report.update(price=res.price, q_min=res.q_min, q_max=res.q_max,
                  arb_violation=res.arb_violation, method=res.method)
    if res.flags:
        report["flags"] = ",".join(res.flags)
    for key, value in report.items():
        print(f"{key}: {value if isinstance(value, str) else fmt(value)}")
    return {}


def _plain_params(hist: AssetHistory, lams, cfg) -> dict[float, ModelParams]:
    return {lam: estimate_params(hist.at(lam), cfg.dt, ddof=cfg.ddof) for lam in lams}


def _pathdep_models(hist, comps, lams, cfg) -> dict[float, cal.PathDepModel]:
    models = {}
    for lam in lams:
        driver = driver_at(comps, lam, cfg)
        fit = fit_coeffs(hist.at(lam), driver, convention=cfg.convention,
                         shape_h=cfg.df, shape_g=cfg.df, kind=cfg.shape_kind)
        models[lam] = cal.PathDepModel(fit.mu_r, fit.coeffs, driver, cfg.convention)
    return models


def cmd_surface(args, cfg: RunConfig) -> dict[str, str]:
    hist = load_history(args.prices, args.esg, cfg)
    quote_date = date.fromisoformat(cfg.quote_date) if cfg.quote_date else None
    quotes = chain_to_quotes(read_option_chain(args.chain), hist.prices, quote_date)
    ccfg = cal.CalibConfig(lambda_grid=cfg.lambda_grid, rf_annual=cfg.rf_annual, dt=cfg.dt)
    workers = cfg.workers if cfg.workers > 1 else None
    kinds = set(cfg.surfaces)

    needed = set(cfg.lambdas)
    if kinds & {"sigma_change", "sigma_vs_bsm"}:
        needed.add(0.0)
    params = _plain_params(hist, sorted(needed), cfg)

    surfaces: dict[str, cal.Surface] = {}
    if "lambda" in kinds:
        if cfg.model == "pathdep":
            comps = _load_components(args.driver_prices, args.driver_esg, cfg)
            models = _pathdep_models(hist, comps, ccfg.lambda_grid, cfg)
        else:
            models = _plain_params(hist, ccfg.lambda_grid, cfg)
        surfaces["surface_lambda.csv"] = cal.lambda_surface(quotes, models, ccfg, workers)

    sigma_by_lam = {}
    sigma_lams = set(cfg.lambdas) if "sigma" in kinds else set()
    if "sigma_change" in kinds:
        sigma_lams |= set(cfg.lambdas) | {0.0}
    if "sigma_vs_bsm" in kinds:
        sigma_lams.add(0.0)
    for lam in sorted(sigma_lams):
        sigma_by_lam[lam] = cal.sigma_surface(quotes, params[lam], ccfg, workers)
        if "sigma" in kinds and lam in cfg.lambdas:
            surfaces[f"surface_sigma_l{_lam_label(lam)}.csv"] = sigma_by_lam[lam]

    bsm = None
    if kinds & {"bsm", "sigma_vs_bsm"}:
        bsm = cal.bsm_surface(quotes, ccfg, workers)
        if "bsm" in kinds:
            surfaces["surface_bsm.csv"] = bsm
    if "sigma_change" in kinds:
        for lam in cfg.lambdas:
            if lam != 0.0:
                surfaces[f"surface_sigma_change_l{_lam_label(lam)}.csv"] = cal.relative_change_surface(
                    sigma_by_lam[lam], sigma_by_lam[0.0], kind=f"sigma_change_l{_lam_label(lam)}")
    if "sigma_vs_bsm" in kinds:
        surfaces["surface_sigma_vs_bsm.csv"] = cal.relative_change_surface(
            sigma_by_lam[0.0], bsm, kind="sigma_vs_bsm")
    if "delta" in kinds:
        for lam in cfg.lambdas:
            surfaces[f"surface_delta_l{_lam_label(lam)}.csv"] = cal.delta_surface(
                quotes, params[lam], ccfg, workers)

    digest = cfg.sha256()
    files = {name: surface_csv(s, digest) for name, s in sorted(surfaces.items())}
    manifest = {
        "config_sha256": digest,
        "config": json.loads(cfg.canonical()),
        "inputs": _input_hashes(args, ["prices", "esg", "chain", "driver_prices", "driver_esg"]),
        "quotes": len(quotes),
        "surfaces": {
            name: {"cells": len(s.cells), "status": s.status_counts(), "notes": list(s.notes)}
            for name, s in sorted(surfaces.items())
        },
    }
    files["manifest.json"] = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    for name, s in sorted(surfaces.items()):
        counts = ", ".join(f"{k}={v}" for k, v in s.status_counts().items() if v)
        print(f"{name}: {len(s.cells)} cells ({counts})")
    return files


def cmd_fit_path(args, cfg: RunConfig) -> dict[str, str]:
    hist = load_history(args.prices, args.esg, cfg)
    comps = _load_components(args.driver_prices, args.driver_esg, cfg)
    if comps[0].dates != hist.dates:
        raise InputError("stock and driver histories are not on the same dates")
    coeff_rows, path_rows = [], []
    for lam in cfg.lambdas:
        driver = driver_at(comps, lam, cfg)
        fit = fit_coeffs(hist.at(lam), driver, convention=cfg.convention,
                         shape_h=cfg.df, shape_g=cfg.df, kind=cfg.shape_kind)
        c = fit.coeffs
        coeff_rows.append((lam, c.c1, c.c2, c.c3, fit.mu_r, fit.residual_norm,
                           fit.converged, ";".join(fit.flags)))
        for d, real, model in zip(hist.dates, fit.realized_prices, fit.model_prices):
            path_rows.append((d.isoformat(), lam, real, model))
        print(f"lambda={lam:g}: c1={fmt(c.c1)} c2={fmt(c.c2)} c3={fmt(c.c3)} "
              f"residual={fmt(fit.residual_norm)}" + ("" if fit.converged else f" ({fit.message})"))
    comment = f"config_sha256={cfg.sha256()}"
    return {
        "coeffs.csv": csv_text(["lambda", "c1", "c2", "c3", "mu_r", "residual_norm", "converged", "flags"],
                               coeff_rows, comment),
        "path_fit.csv": csv_text(["date", "lambda", "realized", "model"], path_rows, comment),
    }


def cmd_simulate_informed(args, cfg: RunConfig) -> dict[str, str]:
    lam = cfg.lambdas[0]
    params = _params_from_args(args, cfg, lam)
    info = InfoSpec(cfg.delta)
    n = args.contracts
    if n is None:
        n = informed_params(params, info, cfg.rf_annual).n_max
    spec = LatticeSpec(1.0, 0.0, 1, cfg.dt, cfg.rf_annual)
    sample = simulate_informed_strategy(spec, params, info, n, cfg.paths, cfg.seed)
    if cfg.convention is Convention.LOG:
        moves = log_moves(params.mu, params.sigma, params.sigma, params.p, cfg.dt, cfg.rf_annual)
    else:
        moves = arith_moves(params.mu, params.sigma, params.p, cfg.dt, cfg.rf_annual)
    rets, probs = strategy_branches(moves, info.p_correct(cfg.dt), n, cfg.rf_annual, cfg.dt, cfg.convention)
    exact_mean = float(probs @ rets)
    exact_var = float(probs @ (rets - exact_mean) ** 2)
    for key, value in [
        ("contracts", n), ("paths", sample.paths),
        ("sample_mean", sample.mean), ("mean_se", sample.mean_se),
        ("sample_var", sample.var), ("var_se", sample.var_se),
        ("branch_mean", exact_mean), ("branch_var", exact_var),
    ]:
        print(f"{key}: {fmt(value)}")
    return {}


COMMANDS = {
    "esg-price": cmd_esg_price,
    "estimate": cmd_estimate,
    "price": cmd_price,
    "surface": cmd_surface,
    "fit-path": cmd_fit_path,
    "simulate-informed": cmd_simulate_informed,
}


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with a [run] section")
    common.add_argument("--lambda", dest="lambdas", help="comma list or start:stop:step")
    common.add_argument("--convention", choices=["arith", "log"])
    common.add_argument("--model", choices=["plain", "informed", "pathdep"])
    common.add_argument("--df", type=float, help="Student's t degrees of freedom for h and g")
    common.add_argument("--out", help="output directory")

    parser = argparse.ArgumentParser(prog="esgtree", description="ESG-valued binomial option pricing.")
    sub = parser.add_subparsers(dest="command", required=True)

    def history(p):
        p.add_argument("--prices", required=True, help="PriceCsv of the stock")
        p.add_argument("--esg", required=True, help="EsgCsv of the stock")

    def driver(p):
        p.add_argument("--driver-prices", nargs="+", default=[], help="PriceCsv per index component")
        p.add_argument("--driver-esg", nargs="+", default=[], help="EsgCsv per index component")

    def params(p):
        p.add_argument("--params", help="parameter table written by 'estimate'")
        p.add_argument("--mu", type=float)
        p.add_argument("--sigma", type=float)
        p.add_argument("--p", type=float)
        p.add_argument("--delta", type=float, help="information intensity")

    p = sub.add_parser("esg-price", parents=[common], help="ESG-valued numeraire series")
    history(p)
    p = sub.add_parser("estimate", parents=[common], help="drift, volatility and up-probability per lambda")
    history(p)
    p = sub.add_parser("price", parents=[common], help="price one European option")
    params(p)
    driver(p)
    p.add_argument("--spot", type=float, required=True)
    p.add_argument("--strike", type=float, required=True)
    p.add_argument("--steps", type=int, help="trading days to expiry")
    p.add_argument("--put", action="store_true")
    p.add_argument("--coeffs", help="c1,c2,c3 for the path-dependent model")
    p = sub.add_parser("surface", parents=[common], help="implied-parameter surfaces from an option chain")
    history(p)
    driver(p)
    p.add_argument("--chain", required=True, help="OptionChainCsv")
    p.add_argument("--surfaces", help=f"comma list from {','.join(SURFACE_KINDS)}")
    p.add_argument("--workers", type=int)
    p = sub.add_parser("fit-path", parents=[common], help="fit the path-dependent volatility coefficients")
    history(p)
    driver(p)
    p = sub.add_parser("simulate-informed", parents=[common], help="Monte-Carlo of the informed strategy")
    params(p)
    p.add_argument("--contracts", type=float, help="forward contracts (default: optimal)")
    p.add_argument("--paths", type=int)
    p.add_argument("--seed", type=int)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    overrides = {
        "lambdas": _floats(args.lambdas) if args.lambdas else None,
        "convention": args.convention,
        "model": args.model,
        "df": args.df,
        "out": args.out,
        "delta": getattr(args, "delta", None),
        "surfaces": tuple(s.strip() for s in args.surfaces.split(",")) if getattr(args, "surfaces", None) else None,
        "workers": getattr(args, "workers", None),
        "paths": getattr(args, "paths", None),
        "seed": getattr(args, "seed", None),
    }
    return cfg.replace(**overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        files = COMMANDS[args.command](args, cfg)
        if files:
            for path in write_outputs(cfg.out, files):
                print(f"wrote {path}")
    except (InputError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
