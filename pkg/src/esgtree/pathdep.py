"""
Path-dependent market-driver model
==================================

The stock's up/down moves follow the sign of a market driver's standardized
innovation, and its volatility multiplier depends on the driver's history:

    z[k]   = p_u if Z[k] >= 0 else -p_d
    x[k]   = sum_{i<k} sqrt(dt) z[i]          (x[0] = 0)
    I[k]   = sum_{j<k} x[j] dt
    eta[k] = c1 + c2 h(x[k]) + c3 g(I[k])
    r[k]   = mu_r dt + eta[k] z[k] sqrt(dt)

``eta[k]`` only uses innovations strictly before step ``k``, so the tree is
adapted to the driver's filtration. ``h`` and ``g`` are Student's t densities
by default (a CDF variant is available).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, stats

from .errors import DegenerateVolatilityError, DomainError, NonPositivePriceError
from .lattice import LatticeSpec, PricingResult, StepMoves, arith_q, log_q, price_moves
from .returns import P_CLAMP, TRADING_DAYS, Convention, EsgSeries, numeraire_prices

ETA_FLOOR = 1e-6
START_VALUES = (-1e-2, -1e-3, 1e-3, 1e-2)


class ShapeKind(str, enum.Enum):
    PDF = "pdf"
    CDF = "cdf"


@dataclass(frozen=True)
class DriverSeries:
    """Standardized market-driver innovations and the cumulative path they generate."""

    r_m: np.ndarray
    z_std: np.ndarray
    p_m: np.ndarray
    z: np.ndarray
    x: np.ndarray
    integral_x: np.ndarray
    dt: float

    def __len__(self) -> int:
        return len(self.z)

    @property
    def p_u(self) -> np.ndarray:
        return np.sqrt((1.0 - self.p_m) / self.p_m)

    @property
    def p_d(self) -> np.ndarray:
        return np.sqrt(self.p_m / (1.0 - self.p_m))


@dataclass(frozen=True)
class EtaCoeffs:
    c1: float
    c2: float
    c3: float
    shape_h: float = 5
    shape_g: float = 5
    kind: ShapeKind = ShapeKind.PDF

    def __post_init__(self):
        object.__setattr__(self, "kind", ShapeKind(self.kind))
        for df in (self.shape_h, self.shape_g):
            if not df > 0:
                raise DomainError(f"degrees of freedom must be positive, got {df}")

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.c1, self.c2, self.c3])

    def with_values(self, c) -> "EtaCoeffs":
        c1, c2, c3 = (float(v) for v in c)
        return EtaCoeffs(c1, c2, c3, self.shape_h, self.shape_g, self.kind)


def _ro(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def shape_fn(df: float, kind: ShapeKind | str = ShapeKind.PDF):
    dist = stats.t(df)
    return dist.pdf if ShapeKind(kind) is ShapeKind.PDF else dist.cdf


def _rolling_fraction(flags: np.ndarray, window: int) -> np.ndarray:
    csum = np.concatenate(([0.0], np.cumsum(flags)))
    k = np.arange(len(flags))
    lo = np.maximum(0, k - window + 1)
    return (csum[k + 1] - csum[lo]) / (k + 1 - lo)


def standardize_driver(
    r_m: Sequence[float],
    dt: float = 1.0 / TRADING_DAYS,
    window: int | None = None,
    ddof: int = 1,
) -> DriverSeries:
    """
    Standardize driver returns and build the two-point innovations.

    ``p_m`` is the share of non-negative standardized returns over the full
    sample, or over a trailing ``window`` ending at each step.
    """
    r_m = np.asarray(r_m, dtype=float)
    if len(r_m) < 2:
        raise DomainError("driver needs at least two returns")
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    sd = float(np.std(r_m, ddof=ddof))
    if sd == 0.0:
        raise DegenerateVolatilityError("driver returns have zero variance")
    z_std = (r_m - np.mean(r_m)) / sd
    up = (z_std >= 0).astype(float)
    if window is None:
        p_m = np.full(len(r_m), np.mean(up))
    else:
        if window < 1:
            raise DomainError("rolling window must be at least one step")
        p_m = _rolling_fraction(up, int(window))
    p_m = np.clip(p_m, P_CLAMP, 1.0 - P_CLAMP)
    pu, pd = np.sqrt((1.0 - p_m) / p_m), np.sqrt(p_m / (1.0 - p_m))
    z = np.where(z_std >= 0, pu, -pd)
    return driver_from_innovations(z, p_m, dt, r_m=r_m, z_std=z_std)


def driver_from_innovations(z, p_m, dt: float, r_m=None, z_std=None) -> DriverSeries:
    """Assemble a driver from given two-point innovations (e.g. simulated ones)."""
    z = np.asarray(z, dtype=float)
    p_m = np.broadcast_to(np.asarray(p_m, dtype=float), z.shape)
    steps = math.sqrt(dt) * z
    x = np.concatenate(([0.0], np.cumsum(steps)[:-1]))
    integral = np.concatenate(([0.0], np.cumsum(x)[:-1])) * dt
    r_m = z if r_m is None else r_m
    z_std = z if z_std is None else z_std
    return DriverSeries(_ro(r_m), _ro(z_std), _ro(p_m), _ro(z), _ro(x), _ro(integral), float(dt))


def simulate_driver(steps: int, p: float, seed: int, dt: float = 1.0 / TRADING_DAYS) -> DriverSeries:
    """Driver with i.i.d. innovations, up with probability ``p``."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    rng = np.random.default_rng(seed)
    ups = rng.random(steps) < p
    pu, pd = math.sqrt((1 - p) / p), math.sqrt(p / (1 - p))
    return driver_from_innovations(np.where(ups, pu, -pd), p, dt)


def eta(coeffs: EtaCoeffs, x_k: float, integral_x: float) -> float:
    """c1 + c2 h(x_k) + c3 g(integral_x)."""
    h = shape_fn(coeffs.shape_h, coeffs.kind)
    g = shape_fn(coeffs.shape_g, coeffs.kind)
    return float(coeffs.c1 + coeffs.c2 * h(x_k) + coeffs.c3 * g(integral_x))


def shape_basis(coeffs: EtaCoeffs, driver: DriverSeries) -> np.ndarray:
    """Columns (1, h(x), g(I)) so that eta = basis @ (c1, c2, c3)."""
    h = shape_fn(coeffs.shape_h, coeffs.kind)(driver.x)
    g = shape_fn(coeffs.shape_g, coeffs.kind)(driver.integral_x)
    return np.column_stack([np.ones(len(driver)), h, g])


def eta_path(coeffs: EtaCoeffs, driver: DriverSeries) -> np.ndarray:
    """Unfloored eta for every step of the driver."""
    return shape_basis(coeffs, driver) @ coeffs.vector


def pd_moves(
    mu_r: float,
    eta_k: float,
    p_m: float,
    dt: float,
    convention: Convention | str,
    rf: float = 0.0,
) -> StepMoves:
    """
    One step of the path-dependent tree.

    U = mu_r dt + eta p_u sqrt(dt), D = mu_r dt - eta p_d sqrt(dt) in both
    conventions; q is the one-step martingale probability of the convention.
    """
    if not 0.0 < p_m < 1.0:
        raise DomainError(f"p_m must lie in (0, 1), got {p_m}")
    pu, pd = math.sqrt((1.0 - p_m) / p_m), math.sqrt(p_m / (1.0 - p_m))
    sq = math.sqrt(dt)
    u = mu_r * dt + eta_k * pu * sq
    d = mu_r * dt - eta_k * pd * sq
    if Convention.parse(convention) is Convention.LOG:
        return StepMoves(u=u, d=d, q=log_q(u, d, rf, dt), p=p_m)
    return StepMoves(u=u, d=d, q=arith_q(u, d, rf, dt), p=p_m)


def model_returns(mu_r: float, eta_values: np.ndarray, driver: DriverSeries) -> np.ndarray:
    return mu_r * driver.dt + eta_values * driver.z * math.sqrt(driver.dt)


def model_prices(
    s0: float,
    mu_r: float,
    coeffs: EtaCoeffs,
    driver: DriverSeries,
    convention: Convention | str,
) -> np.ndarray:
    """Historical model price path S[1..n] driven by the observed innovations."""
    r = model_returns(mu_r, eta_path(coeffs, driver), driver)
    if Convention.parse(convention) is Convention.LOG:
        return s0 * np.exp(np.cumsum(r))
    if np.any(r <= -1.0):
        raise NonPositivePriceError("model return <= -1 on the fitted path")
    return s0 * np.cumprod(1.0 + r)


# --------------------------------------------------------------------------
# Fitting
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    coeffs: EtaCoeffs
    residual_norm: float
    eta: np.ndarray
    model_prices: np.ndarray
    realized_prices: np.ndarray
    mu_r: float
    converged: bool
    message: str = ""
    starts: int = 0
    flags: tuple = field(default=())


def fit_coeffs(
    stock: EsgSeries,
    driver: DriverSeries,
    mu_r: float | None = None,
    s0: float = 1.0,
    convention: Convention | str | None = None,
    shape_h: float = 5,
    shape_g: float = 5,
    kind: ShapeKind | str = ShapeKind.PDF,
    starts: Sequence[float] = START_VALUES,
    eta_floor: float = ETA_FLOOR,
) -> FitResult:
    """
    Least-squares fit of (c1, c2, c3) to the realized ESG price path.

    Nelder-Mead is started from every point of ``starts``^3; the best
    iterate is then polished with a trust-region least-squares solve on the
    price residuals. ``mu_r`` defaults to the mean stock return per unit time.
    """
    convention = Convention.parse(convention if convention is not None else stock.convention)
    if len(stock) != len(driver):
        raise DomainError(f"stock ({len(stock)}) and driver ({len(driver)}) lengths differ")
    dt = driver.dt
    if mu_r is None:
        mu_r = float(np.mean(stock.r_lambda)) / dt
    realized = numeraire_prices(
        EsgSeries(stock.dates, stock.r0, stock.e, stock.lam, stock.r_lambda, convention), s0
    )
    template = EtaCoeffs(0.0, 0.0, 0.0, shape_h, shape_g, kind)
    basis = shape_basis(template, driver)
    drift = mu_r * dt
    shock = driver.z * math.sqrt(dt)
    log_model = convention is Convention.LOG

    def residuals(c):
        r = drift + (basis @ c) * shock
        if log_model:
            path = s0 * np.exp(np.cumsum(r))
        else:
            growth = 1.0 + r
            if np.any(growth <= 0):
                return np.full(len(r), 1e6)
            path = s0 * np.cumprod(growth)
        return path - realized

    def objective(c):
        res = residuals(c)
        return float(res @ res)

    best = None
    grid = [np.array(p) for p in np.array(np.meshgrid(starts, starts, starts)).T.reshape(-1, 3)]
    for x0 in grid:
        out = optimize.minimize(
            objective, x0, method="Nelder-Mead",
            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000, "maxfev": 8000},
        )
        if best is None or out.fun < best.fun:
            best = out
    polish = optimize.least_squares(residuals, best.x, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if polish.success and objective(polish.x) <= best.fun:
        c_hat, converged, message = polish.x, True, polish.message
    else:
        c_hat, converged, message = best.x, bool(best.success), str(best.message)

    coeffs = template.with_values(c_hat)
    eta_hat = basis @ c_hat
    flags = ("eta_below_floor",) if np.any(eta_hat <= eta_floor) else ()
    res = residuals(c_hat)
    return FitResult(
        coeffs=coeffs,
        residual_norm=float(np.linalg.norm(res)),
        eta=_ro(eta_hat),
        model_prices=_ro(res + realized),
        realized_prices=_ro(realized),
        mu_r=float(mu_r),
        converged=converged,
        message=str(message),
        starts=len(grid),
        flags=flags,
    )


# --------------------------------------------------------------------------
# Pricing
# --------------------------------------------------------------------------

def pd_step_moves(
    spec: LatticeSpec,
    mu_r: float,
    coeffs: EtaCoeffs,
    driver: DriverSeries,
    convention: Convention | str,
    eta_floor: float = ETA_FLOOR,
) -> tuple[list[StepMoves], bool]:
    """Per-step moves along the first ``spec.steps`` entries of the driver's eta path."""
    if len(driver) < spec.steps:
        raise DomainError(f"driver has {len(driver)} steps, pricing needs {spec.steps}")
    if not np.allclose(spec.dts, driver.dt, rtol=1e-12, atol=0.0):
        raise DomainError("pricing step length must equal the driver's step length")
    etas = eta_path(coeffs, driver)[: spec.steps]
    floored = bool(np.any(etas <= eta_floor))
    etas = np.where(etas <= eta_floor, eta_floor, etas)
    moves = [
        pd_moves(mu_r, float(e), float(pm), float(dt), convention, float(rf))
        for e, pm, dt, rf in zip(etas, driver.p_m[: spec.steps], spec.dts, spec.rfs)
    ]
    return moves, floored


def pd_price_european(
    spec: LatticeSpec,
    mu_r: float,
    coeffs: EtaCoeffs,
    driver: DriverSeries,
    convention: Convention | str,
    eta_floor: float = ETA_FLOOR,
) -> PricingResult:
    """
    European option on the path-dependent tree.

    With a step-constant eta the tree recombines and the price equals the
    plain tree's bit for bit; otherwise the step-varying tree is priced
    exactly (shallow) or on a terminal-price grid (deep).
    """
    convention = Convention.parse(convention)
    moves, floored = pd_step_moves(spec, mu_r, coeffs, driver, convention, eta_floor)
    result = price_moves(spec, moves, convention)
    if floored:
        return PricingResult(
            result.price, result.q_min, result.q_max, result.arb_violation, result.method,
            result.flags + ("eta_floored",),
        )
    return result
