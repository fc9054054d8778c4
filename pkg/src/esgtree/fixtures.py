"""
Synthetic, format-compatible input files.

Writes one stock, a small set of index components and an option chain whose
mids come from the plain tree at a known ESG intensity, so a ``surface`` run
on these files should return that intensity in every cell.

    python -m esgtree.fixtures <out_dir>
"""

from __future__ import annotations

import sys
from datetime import date
from pathlib import Path

import numpy as np

from .formats import CHAIN_HEADER, ESG_HEADER, PRICE_HEADER, csv_text, write_outputs
from .lattice import LatticeSpec, price_european
from .returns import align_esg, blend_returns, estimate_params, financial_returns, RawEsgRecord

LAMBDA_STAR = 0.4
RF = 0.0152
START, END = "2021-01-04", "2021-12-31"


def business_days(start: str = START, end: str = END) -> list[date]:
    days = np.arange(np.datetime64(start), np.datetime64(end) + 1)
    days = days[np.is_busday(days)]
    return [d.astype(object) for d in days]


def _gbm_closes(rng, n, s0, mu, sigma, dt=1 / 252):
    shocks = rng.standard_normal(n - 1)
    logret = (mu - 0.5 * sigma**2) * dt + sigma * np.sqrt(dt) * shocks
    return s0 * np.exp(np.concatenate(([0.0], np.cumsum(logret))))


def _price_text(days, closes):
    return csv_text(PRICE_HEADER, [(d.isoformat(), round(float(c), 6)) for d, c in zip(days, closes)])


def _esg_records(first: float, second: float) -> list[RawEsgRecord]:
    return [RawEsgRecord(date(2020, 11, 19), first), RawEsgRecord(date(2021, 11, 19), second)]


def _esg_text(records):
    return csv_text(ESG_HEADER, [(r.effective_date.isoformat(), r.score) for r in records])


def build_fixtures(seed: int = 7) -> dict[str, str]:
    rng = np.random.default_rng(seed)
    days = business_days()
    n = len(days)
    files: dict[str, str] = {}

    stock = np.round(_gbm_closes(rng, n, 100.0, 0.25, 0.22), 6)
    stock_esg = _esg_records(90.0, 94.0)
    files["stock_prices.csv"] = _price_text(days, stock)
    files["stock_esg.csv"] = _esg_text(stock_esg)

    for i, (mu, sig, scores) in enumerate([(0.12, 0.2, (60, 64)), (0.18, 0.25, (80, 78)), (0.08, 0.15, (40, 47))]):
        closes = np.round(_gbm_closes(rng, n, 50.0 + 25 * i, mu, sig), 6)
        files[f"index_{i}_prices.csv"] = _price_text(days, closes)
        files[f"index_{i}_esg.csv"] = _esg_text(_esg_records(*scores))

    # chain priced by the plain arithmetic tree at LAMBDA_STAR
    r0 = financial_returns(stock, "arith")
    e = align_esg(days[1:], stock_esg)
    params = estimate_params(blend_returns(r0, e, LAMBDA_STAR, "arith"), 1 / 252)
    quote_date = days[-1]
    spot = float(stock[-1])
    rows = []
    expiries = np.busday_offset(np.datetime64(quote_date), [21, 42, 63, 126], roll="forward")
    for expiry in expiries:
        steps = int(np.busday_count(np.datetime64(quote_date), expiry))
        for m in (0.9, 0.95, 1.0, 1.05, 1.1):
            strike = round(spot * m, 2)
            price = price_european(LatticeSpec(spot, strike, steps, 1 / 252, RF), params).price
            rows.append((quote_date.isoformat(), str(expiry), strike, price))
    files["chain.csv"] = csv_text(CHAIN_HEADER, rows)
    files["run.ini"] = (
        "[run]\n"
        "lambda = 0,0.4\n"
        "lambda_grid = 0:1:0.05\n"
        "convention = arith\n"
        f"rf_annual = {RF}\n"
        "surfaces = lambda,sigma,bsm\n"
    )
    return files


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    out = Path(argv[0] if argv else "fixtures")
    for path in write_outputs(out, build_fixtures()):
        print(path)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
