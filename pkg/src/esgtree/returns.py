"""
ESG-valued returns
==================

Raw ESG scores are mapped onto per-step return units and blended with the
ordinary financial return:

    r_lambda = lambda * e + (1 - lambda) * r0

The blended series compounds into an ESG-valued "price" (a numeraire), from
which drift, volatility and up-probability are estimated for the lattices.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from datetime import date
from typing import Sequence

import numpy as np

from .errors import (
    AlignmentError,
    DegenerateVolatilityError,
    DomainError,
    NonPositivePriceError,
)

P_CLAMP = 1e-6
TRADING_DAYS = 252


class Convention(str, enum.Enum):
    """Compounding convention of a return series and of the tree built on it."""

    ARITHMETIC = "arith"
    LOG = "log"

    @classmethod
    def parse(cls, value: "Convention | str") -> "Convention":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"arith": cls.ARITHMETIC, "arithmetic": cls.ARITHMETIC, "log": cls.LOG}
        if key not in aliases:
            raise DomainError(f"unknown convention {value!r}; expected 'arith' or 'log'")
        return aliases[key]


@dataclass(frozen=True)
class RawEsgRecord:
    effective_date: date
    score: float


@dataclass(frozen=True)
class ModelParams:
    """Instantaneous drift, volatility and natural up-probability of one asset."""

    mu: float
    sigma: float
    p: float
    convention: Convention = Convention.ARITHMETIC

    def __post_init__(self):
        object.__setattr__(self, "convention", Convention.parse(self.convention))
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.p < 1.0:
            raise DomainError(f"p must lie in (0, 1), got {self.p}")

    def replace(self, **changes) -> "ModelParams":
        values = dict(mu=self.mu, sigma=self.sigma, p=self.p, convention=self.convention)
        values.update(changes)
        return ModelParams(**values)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class EsgSeries:
    """Step-aligned financial returns, normalized ESG and their blend at one lambda."""

    dates: tuple
    r0: np.ndarray
    e: np.ndarray
    lam: float
    r_lambda: np.ndarray
    convention: Convention = Convention.ARITHMETIC

    def __len__(self) -> int:
        return len(self.r_lambda)


@dataclass(frozen=True)
class SeriesStats:
    mean: float
    stdev: float
    sharpe: float
    mdd: float


def normalize_esg(
    raw: RawEsgRecord | float,
    c: float = TRADING_DAYS,
    esg_min: float = 0.0,
    esg_max: float = 100.0,
) -> float:
    """Map a raw score in [esg_min, esg_max] onto [-1/c, 1/c], midpoint to zero."""
    score = raw.score if isinstance(raw, RawEsgRecord) else float(raw)
    if not esg_min < esg_max:
        raise DomainError(f"esg_min ({esg_min}) must be below esg_max ({esg_max})")
    if not c > 0:
        raise DomainError(f"scaling constant c must be positive, got {c}")
    if not esg_min <= score <= esg_max:
        raise DomainError(f"ESG score {score} outside [{esg_min}, {esg_max}]")
    midpoint = 0.5 * (esg_min + esg_max)
    half_range = 0.5 * (esg_max - esg_min)
    return (score - midpoint) / (half_range * c)


def align_esg(
    dates: Sequence[date],
    records: Sequence[RawEsgRecord],
    c: float = TRADING_DAYS,
    esg_min: float = 0.0,
    esg_max: float = 100.0,
) -> np.ndarray:
    """
    Normalized ESG value for every date, carrying the latest record forward.

    The value used on ``dates[k]`` comes from the most recent record whose
    effective date is on or before ``dates[k]``.
    """
    ordered = sorted(records, key=lambda rec: rec.effective_date)
    eff = [rec.effective_date for rec in ordered]
    vals = [normalize_esg(rec, c, esg_min, esg_max) for rec in ordered]
    out = np.empty(len(dates))
    j = -1
    for k, d in enumerate(dates):
        while j + 1 < len(eff) and eff[j + 1] <= d:
            j += 1
        if j < 0:
            raise AlignmentError(f"no ESG record effective on or before {d}")
        out[k] = vals[j]
    return out


def financial_returns(closes: Sequence[float], convention: Convention | str) -> np.ndarray:
    """Per-step returns of a close series (length n-1)."""
    closes = np.asarray(closes, dtype=float)
    if np.any(closes <= 0):
        raise DomainError("closing prices must be positive")
    if Convention.parse(convention) is Convention.LOG:
        return np.diff(np.log(closes))
    return closes[1:] / closes[:-1] - 1.0


def blend_returns(
    r0: Sequence[float],
    e: Sequence[float],
    lam: float,
    convention: Convention | str = Convention.ARITHMETIC,
    dates: Sequence[date] | None = None,
) -> EsgSeries:
    """Blend financial returns with step-aligned normalized ESG values."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    r0 = np.asarray(r0, dtype=float)
    e = np.asarray(e, dtype=float)
    if r0.shape != e.shape:
        raise AlignmentError(f"return and ESG series differ in length ({len(r0)} vs {len(e)})")
    if dates is None:
        dates = tuple(range(len(r0)))
    elif len(dates) != len(r0):
        raise AlignmentError("dates and returns differ in length")
    r_lambda = lam * e + (1.0 - lam) * r0
    return EsgSeries(
        dates=tuple(dates),
        r0=_frozen(r0),
        e=_frozen(e),
        lam=float(lam),
        r_lambda=_frozen(r_lambda),
        convention=Convention.parse(convention),
    )


def numeraire_prices(series: EsgSeries, s0: float = 1.0) -> np.ndarray:
    """Compound the ESG-valued returns into a price path (excluding ``s0`` itself)."""
    if not s0 > 0:
        raise DomainError(f"s0 must be positive, got {s0}")
    r = series.r_lambda
    if series.convention is Convention.LOG:
        return s0 * np.exp(np.cumsum(r))
    if np.any(r <= -1.0):
        raise NonPositivePriceError("an arithmetic return <= -1 wipes out the price")
    return s0 * np.cumprod(1.0 + r)


def estimate_params(series: EsgSeries, dt: float, ddof: int = 1) -> ModelParams:
    """
    Drift, volatility and up-probability from an ESG-valued return history.

    Under the log convention the stock drift adds back the convexity term,
    mu = mean/dt + sigma^2/2. The up-probability is the share of steps with
    a non-negative return, clamped to [1e-6, 1 - 1e-6].
    """
    r = series.r_lambda
    if len(r) < 2:
        raise DomainError("need at least two returns to estimate parameters")
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    sd = float(np.std(r, ddof=ddof))
    if sd == 0.0:
        raise DegenerateVolatilityError("ESG-valued returns have zero variance")
    sigma = sd / math.sqrt(dt)
    mu = float(np.mean(r)) / dt
    if series.convention is Convention.LOG:
        mu += 0.5 * sigma**2
    p = float(np.mean(r >= 0.0))
    p = min(max(p, P_CLAMP), 1.0 - P_CLAMP)
    return ModelParams(mu=mu, sigma=sigma, p=p, convention=series.convention)


def max_drawdown(prices: Sequence[float]) -> float:
    """Largest peak-to-trough decline of a price path, as a fraction of the peak."""
    prices = np.asarray(prices, dtype=float)
    if prices.size == 0:
        return 0.0
    peak = np.maximum.accumulate(prices)
    return float(np.max((peak - prices) / peak))


def series_stats(series: EsgSeries, rf_annual: float, dt: float, ddof: int = 1) -> SeriesStats:
    """Mean, stdev, per-step Sharpe ratio and maximum drawdown of a blended series."""
    r = series.r_lambda
    if len(r) == 0:
        raise DomainError("empty series")
    mean = float(np.mean(r))
    sd = float(np.std(r, ddof=ddof)) if len(r) > ddof else 0.0
    if sd == 0.0:
        raise DegenerateVolatilityError("Sharpe ratio undefined for zero volatility")
    sharpe = (mean - rf_annual * dt) / sd
    path = np.concatenate(([1.0], numeraire_prices(series, 1.0)))
    return SeriesStats(mean=mean, stdev=sd, sharpe=sharpe, mdd=max_drawdown(path))


def build_index(components: Sequence[EsgSeries]) -> EsgSeries:
    """Equal-weighted index of several ESG-valued series sharing dates and lambda."""
    if not components:
        raise DomainError("an index needs at least one component")
    first = components[0]
    for comp in components[1:]:
        if comp.dates != first.dates:
            raise AlignmentError("index components are not aligned on the same dates")
        if comp.lam != first.lam:
            raise AlignmentError("index components use different ESG intensities")
        if comp.convention is not first.convention:
            raise AlignmentError("index components mix compounding conventions")
    r0 = np.mean([c.r0 for c in components], axis=0)
    e = np.mean([c.e for c in components], axis=0)
    r_lambda = np.mean([c.r_lambda for c in components], axis=0)
    return EsgSeries(
        dates=first.dates,
        r0=_frozen(r0),
        e=_frozen(e),
        lam=first.lam,
        r_lambda=_frozen(r_lambda),
        convention=first.convention,
    )
