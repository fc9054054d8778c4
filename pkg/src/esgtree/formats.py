"""
File formats and run configuration
==================================

CSV inputs (UTF-8, comma-delimited, ISO dates):

    PriceCsv        date,close
    EsgCsv          effective_date,score
    OptionChainCsv  quote_date,expiry,strike,mid

Outputs are built in memory first and only then written, each through a
temporary file and an atomic rename, so a failing run leaves no partial
files behind. Every SurfaceCsv starts with a ``# config_sha256=...`` line.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .calibration import Cell, OptionQuote, Surface
from .errors import InputError
from .returns import Convention, RawEsgRecord

PRICE_HEADER = ["date", "close"]
ESG_HEADER = ["effective_date", "score"]
CHAIN_HEADER = ["quote_date", "expiry", "strike", "mid"]
SURFACE_HEADER = ["T_days", "moneyness", "value", "residual", "status"]

MODELS = ("plain", "informed", "pathdep")
SURFACE_KINDS = ("lambda", "sigma", "bsm", "delta", "sigma_change", "sigma_vs_bsm")


# --------------------------------------------------------------------------
# Readers
# --------------------------------------------------------------------------

def _rows(path: str | Path, header: list[str]):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    reader = csv.reader(io.StringIO(text))
    first = next(reader, None)
    if first is None or [h.strip() for h in first] != header:
        raise InputError(f"{path}:1: expected header {','.join(header)}")
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        yield lineno, [cell.strip() for cell in row]


def _date(value: str, where: str) -> date:
    try:
        return date.fromisoformat(value)
    except ValueError:
        raise InputError(f"{where}: invalid ISO date {value!r}") from None


def _number(value: str, where: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise InputError(f"{where}: invalid number {value!r}") from None
    if not math.isfinite(x):
        raise InputError(f"{where}: non-finite number {value!r}")
    return x


@dataclass(frozen=True)
class PriceSeries:
    dates: tuple
    closes: np.ndarray

    def close_on_or_before(self, day: date) -> float:
        idx = int(np.searchsorted(np.array(self.dates, dtype="datetime64[D]"),
                                  np.datetime64(day, "D"), side="right")) - 1
        if idx < 0:
            raise InputError(f"no closing price on or before {day}")
        return float(self.closes[idx])


def read_price_csv(path) -> PriceSeries:
    dates, closes = [], []
    for lineno, (d, c) in _rows(path, PRICE_HEADER):
        where = f"{path}:{lineno}"
        day = _date(d, where)
        close = _number(c, where)
        if close <= 0:
            raise InputError(f"{where}: close must be positive")
        if dates and day <= dates[-1]:
            raise InputError(f"{where}: dates must be strictly increasing")
        dates.append(day)
        closes.append(close)
    if len(dates) < 2:
        raise InputError(f"{path}: need at least two prices")
    arr = np.array(closes)
    arr.setflags(write=False)
    return PriceSeries(tuple(dates), arr)


def read_esg_csv(path, esg_min: float = 0.0, esg_max: float = 100.0) -> list[RawEsgRecord]:
    records: list[RawEsgRecord] = []
    for lineno, (d, s) in _rows(path, ESG_HEADER):
        where = f"{path}:{lineno}"
        day = _date(d, where)
        score = _number(s, where)
        if not esg_min <= score <= esg_max:
            raise InputError(f"{where}: score {score} outside [{esg_min}, {esg_max}]")
        if records and day <= records[-1].effective_date:
            raise InputError(f"{where}: effective dates must be strictly increasing")
        records.append(RawEsgRecord(day, score))
    if not records:
        raise InputError(f"{path}: no ESG records")
    return records


@dataclass(frozen=True)
class ChainRow:
    quote_date: date
    expiry: date
    strike: float
    mid: float


def read_option_chain(path) -> list[ChainRow]:
    """Chain rows with a positive mid; zero-mid rows are dropped."""
    rows = []
    for lineno, (qd, ex, k, m) in _rows(path, CHAIN_HEADER):
        where = f"{path}:{lineno}"
        quote_date, expiry = _date(qd, where), _date(ex, where)
        strike, mid = _number(k, where), _number(m, where)
        if expiry <= quote_date:
            raise InputError(f"{where}: expiry must fall after the quote date")
        if strike <= 0:
            raise InputError(f"{where}: strike must be positive")
        if mid < 0:
            raise InputError(f"{where}: negative mid price")
        if mid > 0:
            rows.append(ChainRow(quote_date, expiry, strike, mid))
    return rows


def trading_days(start: date, end: date) -> int:
    """Business days in [start, end), i.e. pricing steps from quote date to expiry."""
    return int(np.busday_count(np.datetime64(start, "D"), np.datetime64(end, "D")))


def chain_to_quotes(rows: Sequence[ChainRow], prices: PriceSeries, quote_date: date | None = None) -> list[OptionQuote]:
    if not rows:
        raise InputError("option chain has no rows with a positive mid price")
    dates = sorted({r.quote_date for r in rows})
    if quote_date is None:
        if len(dates) > 1:
            raise InputError(f"chain mixes {len(dates)} quote dates; set quote_date in the config")
        quote_date = dates[0]
    spot = prices.close_on_or_before(quote_date)
    quotes = []
    for r in rows:
        if r.quote_date != quote_date:
            continue
        steps = trading_days(r.quote_date, r.expiry)
        if steps < 1:
            raise InputError(f"expiry {r.expiry} is not a trading day after {r.quote_date}")
        quotes.append(OptionQuote(strike=r.strike, maturity=steps, mid_price=r.mid, spot=spot))
    if not quotes:
        raise InputError(f"no chain rows on quote date {quote_date}")
    return quotes


# --------------------------------------------------------------------------
# Writers
# --------------------------------------------------------------------------

def fmt(x) -> str:
    """Shortest round-trip representation, so outputs are byte-stable."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence], comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def surface_csv(surface: Surface, config_hash: str) -> str:
    rows = [(c.maturity, c.moneyness, c.value, c.residual, c.status.value) for c in surface.rows()]
    return csv_text(SURFACE_HEADER, rows, comment=f"config_sha256={config_hash}")


def read_surface_csv(path) -> Surface:
    from .calibration import Status

    lines = Path(path).read_text(encoding="utf-8").splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    reader = csv.reader(body)
    if next(reader, None) != SURFACE_HEADER:
        raise InputError(f"{path}: not a surface file")
    cells = {}
    for row in reader:
        t, m = int(row[0]), float(row[1])
        cells[(t, round(m, 12))] = Cell(t, m, float(row[2]), float(row[3]), Status(row[4]))
    return Surface(Path(path).stem, cells)


def write_outputs(out_dir: str | Path, files: Mapping[str, str]) -> list[Path]:
    """
    Write every file via a temporary sibling and ``os.replace``.

    Callers assemble ``files`` completely before calling, so a failed run
    never reaches this point and leaves the directory untouched.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.", suffix=".tmp")
            staged.append((tmp, out_dir / name))
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    except BaseException:
        for tmp, _ in staged:
            Path(tmp).unlink(missing_ok=True)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)
    return [final for _, final in staged]


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# Run configuration
# --------------------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    """'0,0.25,0.5' or a 'start:stop:step' range (inclusive of stop)."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError("range must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("range step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        digits = max(0, -int(math.floor(math.log10(step))) + 2)
        return tuple(round(start + i * step, digits) for i in range(n))
    return tuple(float(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class RunConfig:
    """
    Options shared by all commands. Loaded from an INI-style file with a
    single ``[run]`` section; unknown keys are rejected.
    """

    lambdas: tuple = (0.0,)
    lambda_grid: tuple = tuple(round(0.01 * i, 2) for i in range(101))
    convention: Convention = Convention.ARITHMETIC
    model: str = "plain"
    c: float = 252.0
    esg_min: float = 0.0
    esg_max: float = 100.0
    rf_annual: float = 0.0152
    steps: int = 252
    df: float = 5.0
    shape_kind: str = "pdf"
    delta: float = 0.0
    surfaces: tuple = ("lambda", "sigma", "bsm", "delta")
    quote_date: str = ""
    window: int = 0
    ddof: int = 1
    workers: int = 1
    seed: int = 0
    paths: int = 100000
    out: str = "out"

    def __post_init__(self):
        object.__setattr__(self, "convention", Convention.parse(self.convention))
        if self.model not in MODELS:
            raise InputError(f"model must be one of {', '.join(MODELS)}")
        if self.shape_kind not in ("pdf", "cdf"):
            raise InputError("shape_kind must be pdf or cdf")
        for kind in self.surfaces:
            if kind not in SURFACE_KINDS:
                raise InputError(f"unknown surface kind {kind!r}")
        if not self.lambdas or any(not 0 <= v <= 1 for v in self.lambdas):
            raise InputError("lambda values must lie in [0, 1]")
        grid = self.lambda_grid
        if not grid or any(not 0 <= v <= 1 for v in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise InputError("lambda_grid must be increasing values in [0, 1]")
        if not self.c > 0 or not self.esg_min < self.esg_max:
            raise InputError("need c > 0 and esg_min < esg_max")
        if self.steps < 1 or self.df <= 0 or self.workers < 1 or self.paths < 1:
            raise InputError("steps, df, workers and paths must be positive")
        if self.quote_date:
            try:
                date.fromisoformat(self.quote_date)
            except ValueError:
                raise InputError(f"quote_date {self.quote_date!r} is not an ISO date") from None

    @property
    def dt(self) -> float:
        return 1.0 / 252.0

    def canonical(self) -> str:
        """Settings that determine results; output location and parallelism are left out."""
        data = asdict(self)
        data["convention"] = self.convention.value
        for key in ("out", "workers"):
            data.pop(key)
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def replace(self, **changes) -> "RunConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig(**data)


_PARSERS = {
    "lambdas": _floats,
    "lambda_grid": _floats,
    "convention": str,
    "model": str,
    "c": float,
    "esg_min": float,
    "esg_max": float,
    "rf_annual": float,
    "steps": int,
    "df": float,
    "shape_kind": str,
    "delta": float,
    "surfaces": lambda s: tuple(p.strip() for p in s.split(",") if p.strip()),
    "quote_date": str,
    "window": int,
    "ddof": int,
    "workers": int,
    "seed": int,
    "paths": int,
    "out": str,
}
_ALIASES = {"lambda": "lambdas"}


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise InputError(f"{source}: {exc}") from None
    extra = [s for s in parser.sections() if s != "run"]
    if extra:
        raise InputError(f"{source}: unknown section(s) {', '.join(extra)}")
    values = {}
    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            name = _ALIASES.get(key, key)
            if name not in _PARSERS:
                raise InputError(f"{source}: unknown key {key!r}")
            try:
                values[name] = _PARSERS[name](raw)
            except ValueError as exc:
                raise InputError(f"{source}: bad value for {key!r}: {exc}") from None
    try:
        return RunConfig(**values)
    except InputError as exc:
        raise InputError(f"{source}: {exc}") from None
    except ValueError as exc:
        raise InputError(f"{source}: {exc}") from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config_text(text, str(path))
