"""
Implied-parameter surfaces
==========================

Every (maturity, moneyness) cell is calibrated on its own by minimizing the
squared relative pricing error ((model - market) / market)^2:

* implied lambda: exhaustive search over a lambda grid (ties -> smallest)
* implied sigma / BSM sigma / information intensity delta: golden-section
  search started on several equal subintervals of the domain

Cells are independent, so surfaces can be evaluated in a process pool; the
result never depends on evaluation order.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache, partial
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ComplexVolatilityError, DomainError, EsgTreeError, SingularityError
from .informed import THETA_FLOOR, InfoSpec, price_informed
from .lattice import LatticeSpec, Payoff, bsm_call, price_european, terminal_distribution
from .pathdep import DriverSeries, EtaCoeffs, pd_price_european, pd_step_moves
from .returns import TRADING_DAYS, Convention, ModelParams

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# squared relative error below which two minima are indistinguishable (1e-6 in price)
TIE_TOL = 1e-12


class Status(str, enum.Enum):
    CONVERGED = "converged"
    BOUNDARY = "boundary"
    SINGULAR = "singular"
    EMPTY = "empty"


@dataclass(frozen=True)
class OptionQuote:
    """Call quote: strike, trading days to expiry, mid price and spot on the quote date."""

    strike: float
    maturity: int
    mid_price: float
    spot: float

    def __post_init__(self):
        if not self.mid_price > 0:
            raise DomainError(f"mid price must be positive, got {self.mid_price}")
        if not self.spot > 0:
            raise DomainError(f"spot must be positive, got {self.spot}")
        if int(self.maturity) != self.maturity or self.maturity < 1:
            raise DomainError(f"maturity must be a positive number of steps, got {self.maturity}")
        object.__setattr__(self, "maturity", int(self.maturity))

    @property
    def moneyness(self) -> float:
        return self.strike / self.spot

    @property
    def key(self) -> tuple[int, float]:
        return (self.maturity, round(self.moneyness, 12))


@dataclass(frozen=True)
class Cell:
    maturity: int
    moneyness: float
    value: float
    residual: float
    status: Status
    flags: tuple = ()


@dataclass(frozen=True)
class Surface:
    """Calibrated cells keyed by (trading days, moneyness)."""

    kind: str
    cells: Mapping[tuple[int, float], Cell]
    notes: tuple = ()

    def rows(self) -> list[Cell]:
        return [self.cells[k] for k in sorted(self.cells)]

    def values(self) -> dict[tuple[int, float], float]:
        return {k: c.value for k, c in self.cells.items()}

    def status_counts(self) -> dict[str, int]:
        counts = {s.value: 0 for s in Status}
        for c in self.cells.values():
            counts[c.status.value] += 1
        return counts


def default_lambda_grid() -> tuple[float, ...]:
    return tuple(round(0.01 * i, 2) for i in range(101))


@dataclass(frozen=True)
class CalibConfig:
    lambda_grid: tuple = field(default_factory=default_lambda_grid)
    sigma_domain: tuple = (1e-4, 5.0)
    delta_domain: tuple | None = None
    rf_annual: float = 0.0152
    dt: float = 1.0 / TRADING_DAYS
    tol: float = 1e-6
    starts: int = 5
    theta_floor: float = THETA_FLOOR

    def __post_init__(self):
        grid = tuple(float(v) for v in self.lambda_grid)
        if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
            raise DomainError("lambda grid must be nonempty and strictly increasing")
        object.__setattr__(self, "lambda_grid", grid)
        if self.delta_domain is None:
            object.__setattr__(self, "delta_domain", (0.0, 1.0 / math.sqrt(self.dt)))
        for name in ("sigma_domain", "delta_domain"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise DomainError(f"{name} must be an ordered interval")
        if not self.dt > 0 or not self.tol > 0 or self.starts < 1:
            raise DomainError("dt and tol must be positive, starts at least one")

    def spec_for(self, quote: OptionQuote) -> LatticeSpec:
        return LatticeSpec(
            s0=quote.spot, strike=quote.strike, steps=quote.maturity,
            dt=self.dt, rf=self.rf_annual, payoff=Payoff.CALL,
        )


def objective(model_price: float, market_price: float) -> float:
    """Squared relative pricing error."""
    if not market_price > 0:
        raise DomainError("market price must be positive")
    return ((model_price - market_price) / market_price) ** 2


# --------------------------------------------------------------------------
# Scalar search
# --------------------------------------------------------------------------

def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Minimize ``f`` on [lo, hi] to an interval width of ``tol``; returns (x, f(x))."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    candidates = [(fc, c), (fd, d)]
    # an end that never moved is a candidate too, so monotone objectives reach it
    if a == lo:
        candidates.append((f(lo), lo))
    if b == hi:
        candidates.append((f(hi), hi))
    fx, x = min(candidates)
    return x, fx


@dataclass(frozen=True)
class ScalarFit:
    x: float
    fx: float
    boundary: str | None
    multimodal: bool


def multistart_minimize(
    f, lo: float, hi: float, tol: float, starts: int, tie_tol: float = TIE_TOL
) -> ScalarFit:
    """
    Golden-section on ``starts`` equal subintervals, keeping the best.

    Minima whose objective is within ``tie_tol`` of the best fit the quote
    equally well; the smallest such x wins.
    """
    edges = np.linspace(lo, hi, starts + 1)
    found = [golden_section(f, float(a), float(b), tol) for a, b in zip(edges[:-1], edges[1:])]
    best = min(fi for _, fi in found)
    x, fx = min((t for t in found if t[1] <= best + tie_tol), key=lambda t: t[0])
    interior = [
        (xi, fi) for (xi, fi), a, b in zip(found, edges[:-1], edges[1:])
        if xi - a > 2 * tol and b - xi > 2 * tol
    ]
    distinct = {round(xi / tol) for xi, _ in interior}
    boundary = "lower" if x - lo <= 2 * tol else "upper" if hi - x <= 2 * tol else None
    return ScalarFit(float(x), float(fx), boundary, len(distinct) > 1)


def _cell(quote, value, residual, status, flags=()) -> Cell:
    return Cell(quote.maturity, quote.moneyness, float(value), float(residual), Status(status), tuple(flags))


def _fit_to_cell(quote: OptionQuote, fit: ScalarFit, lower_ok: bool = False) -> Cell:
    flags = ("multimodal",) if fit.multimodal else ()
    if fit.boundary == "upper" or (fit.boundary == "lower" and not lower_ok):
        return _cell(quote, fit.x, fit.fx, Status.BOUNDARY, flags + (f"{fit.boundary}_bound",))
    return _cell(quote, fit.x, fit.fx, Status.CONVERGED, flags)


# --------------------------------------------------------------------------
# Models priced by the surfaces
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PathDepModel:
    """Path-dependent model at one lambda: drift, fitted coefficients and driver."""

    mu_r: float
    coeffs: EtaCoeffs
    driver: DriverSeries
    convention: Convention = Convention.ARITHMETIC

    def price(self, spec: LatticeSpec) -> float:
        return pd_price_european(spec, self.mu_r, self.coeffs, self.driver, self.convention).price


def model_price(model, spec: LatticeSpec) -> float:
    if isinstance(model, ModelParams):
        return price_european(spec, model).price
    if isinstance(model, PathDepModel):
        return model.price(spec)
    raise DomainError(f"unsupported model type {type(model).__name__}")


class _PathDepPricer:
    """Caches terminal distributions per (lambda, steps); strikes reuse them."""

    def __init__(self, models: Mapping[float, PathDepModel], config: CalibConfig):
        self.models = models
        self.config = config
        self._dist = lru_cache(maxsize=None)(self._distribution)

    def _distribution(self, lam: float, spot: float, steps: int):
        m = self.models[lam]
        spec = LatticeSpec(spot, 0.0, steps, self.config.dt, self.config.rf_annual)
        moves, _ = pd_step_moves(spec, m.mu_r, m.coeffs, m.driver, m.convention)
        if all(mv == moves[0] for mv in moves) or steps <= 18:
            return None
        disc = (1.0 + self.config.rf_annual * self.config.dt) ** -steps
        if m.convention is Convention.LOG:
            disc = math.exp(-self.config.rf_annual * self.config.dt * steps)
        return terminal_distribution(spot, moves, m.convention, disc)

    def __call__(self, lam: float, spec: LatticeSpec) -> float:
        dist = self._dist(lam, spec.s0, spec.steps)
        if dist is None:
            return self.models[lam].price(spec)
        return dist.price(spec.strike, spec.payoff)


# --------------------------------------------------------------------------
# Per-cell inversions
# --------------------------------------------------------------------------

def implied_lambda(
    quote: OptionQuote,
    params_by_lambda: Mapping[float, ModelParams | PathDepModel],
    config: CalibConfig,
    pricer: Callable[[float, LatticeSpec], float] | None = None,
) -> Cell:
    """Grid search over ``config.lambda_grid``; ties go to the smallest lambda."""
    spec = config.spec_for(quote)
    if pricer is None:
        pricer = lambda lam, s: model_price(params_by_lambda[lam], s)  # noqa: E731
    best_lam, best_res = None, math.inf
    for lam in config.lambda_grid:
        if lam not in params_by_lambda:
            continue
        try:
            res = objective(pricer(lam, spec), quote.mid_price)
        except EsgTreeError:
            continue
        if math.isfinite(res) and res < best_res:
            best_lam, best_res = lam, res
    if best_lam is None:
        return _cell(quote, math.nan, math.nan, Status.EMPTY)
    return _cell(quote, best_lam, best_res, Status.CONVERGED)


def _safe(fn):
    def wrapped(x):
        try:
            v = fn(x)
        except EsgTreeError:
            return math.inf
        return v if math.isfinite(v) else math.inf
    return wrapped


def implied_sigma(quote: OptionQuote, params: ModelParams, config: CalibConfig) -> Cell:
    """Volatility minimizing the relative pricing error with mu and p held fixed."""
    spec = config.spec_for(quote)
    f = _safe(lambda s: objective(price_european(spec, params.replace(sigma=s)).price, quote.mid_price))
    lo, hi = config.sigma_domain
    return _fit_to_cell(quote, multistart_minimize(f, lo, hi, config.tol, config.starts))


def implied_sigma_bsm(quote: OptionQuote, config: CalibConfig) -> Cell:
    """Black-Scholes-Merton implied volatility by the same search."""
    maturity = quote.maturity * config.dt
    f = _safe(lambda s: objective(
        bsm_call(quote.spot, quote.strike, config.rf_annual, s, maturity), quote.mid_price))
    lo, hi = config.sigma_domain
    return _fit_to_cell(quote, multistart_minimize(f, lo, hi, config.tol, config.starts))


def implied_delta(quote: OptionQuote, params: ModelParams, config: CalibConfig) -> Cell:
    """
    Information intensity on (0, 1/sqrt(dt)).

    A minimizer at the lower end means no inside information and counts as
    converged; the upper end is reported as a boundary cell. A market price
    of risk below the floor makes the optimal contract count unbounded: the
    cell is marked singular with value 0.
    """
    spec = config.spec_for(quote)
    theta = (params.mu - config.rf_annual) / params.sigma
    if params.convention is Convention.ARITHMETIC and abs(theta) < config.theta_floor:
        return _cell(quote, 0.0, math.nan, Status.SINGULAR, ("theta_below_floor",))
    lo, hi = config.delta_domain
    hi = hi * (1.0 - 1e-9)  # the domain is open on the right

    failures = []

    def f(d):
        try:
            return objective(price_informed(spec, params, InfoSpec(d)).price, quote.mid_price)
        except (SingularityError, ComplexVolatilityError) as exc:
            failures.append(type(exc).__name__)
            return math.inf
        except EsgTreeError:
            return math.inf

    fit = multistart_minimize(f, lo, hi, config.tol, config.starts)
    if not math.isfinite(fit.fx):
        return _cell(quote, math.nan, math.nan, Status.SINGULAR, tuple(sorted(set(failures))))
    return _fit_to_cell(quote, fit, lower_ok=True)


def relative_change_surface(surface_a: Surface, surface_b: Surface, kind: str | None = None) -> Surface:
    """100 (a - b) / b on the cells both surfaces share."""
    cells, notes = {}, []
    for key in sorted(set(surface_a.cells) & set(surface_b.cells)):
        a, b = surface_a.cells[key], surface_b.cells[key]
        if b.value == 0 or not (math.isfinite(a.value) and math.isfinite(b.value)):
            notes.append(f"omitted T={key[0]} M={key[1]:.6g}: reference value {b.value}")
            continue
        status = a.status if a.status is not Status.CONVERGED else b.status
        cells[key] = Cell(a.maturity, a.moneyness, 100.0 * (a.value - b.value) / b.value,
                          max(a.residual, b.residual), status)
    return Surface(kind or f"{surface_a.kind}_vs_{surface_b.kind}", cells, tuple(notes))


# --------------------------------------------------------------------------
# Surfaces
# --------------------------------------------------------------------------

def _check_unique(quotes: Sequence[OptionQuote]) -> None:
    seen = set()
    for q in quotes:
        if q.key in seen:
            raise DomainError(f"duplicate quote for maturity {q.maturity} and moneyness {q.moneyness:.6g}")
        seen.add(q.key)


def build_surface(
    kind: str,
    quotes: Sequence[OptionQuote],
    solver: Callable[[OptionQuote], Cell],
    workers: int | None = None,
) -> Surface:
    """
    Evaluate ``solver`` on every quote.

    With ``workers`` > 1 cells run in a process pool (``solver`` must then be
    picklable, e.g. a ``functools.partial`` of a module-level function).
    """
    if not quotes:
        raise DomainError("no quotes to calibrate")
    _check_unique(quotes)
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solver, quotes))
    else:
        results = [solver(q) for q in quotes]
    return Surface(kind, {q.key: c for q, c in zip(quotes, results)})


def lambda_surface(quotes, params_by_lambda, config: CalibConfig, workers=None) -> Surface:
    models = list(params_by_lambda.values())
    if models and all(isinstance(m, PathDepModel) for m in models):
        # the distribution cache lives in one process
        pricer = _PathDepPricer(params_by_lambda, config)
        return build_surface("implied_lambda", quotes,
                             partial(implied_lambda, params_by_lambda=params_by_lambda,
                                     config=config, pricer=pricer))
    return build_surface("implied_lambda", quotes,
                         partial(implied_lambda, params_by_lambda=params_by_lambda, config=config),
                         workers)


def sigma_surface(quotes, params: ModelParams, config: CalibConfig, workers=None) -> Surface:
    return build_surface("implied_sigma", quotes, partial(implied_sigma, params=params, config=config), workers)


def bsm_surface(quotes, config: CalibConfig, workers=None) -> Surface:
    return build_surface("bsm_sigma", quotes, partial(implied_sigma_bsm, config=config), workers)


def delta_surface(quotes, params: ModelParams, config: CalibConfig, workers=None) -> Surface:
    return build_surface("implied_delta", quotes, partial(implied_delta, params=params, config=config), workers)
