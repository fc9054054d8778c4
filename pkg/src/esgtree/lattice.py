"""
ESG-valued binomial trees
=========================

Two compounding conventions share one lattice machinery:

* arithmetic: S -> S(1+U) or S(1+D), bond grows by (1 + rf dt),
  q = (rf dt - D) / (U - D)
* log:        S -> S e^U or S e^D, bond grows by e^{rf dt},
  q = (e^{rf dt} - e^D) / (e^U - e^D)

With p^u = sqrt((1-p)/p), p^d = sqrt(p/(1-p)) the moves match the first two
conditional moments of the return process. When every step uses the same
moves the tree recombines and is priced by backward induction over k+1
nodes per layer. Step-dependent moves do not recombine; shallow trees are
enumerated path by path and deep ones are priced on a log-spaced price grid
whose projection preserves probability mass and the conditional mean;
two grid resolutions are combined by Richardson extrapolation.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .errors import DomainError, NonPositivePriceError
from .returns import Convention, ModelParams

MAX_EXACT_DEPTH = 18
GRID_POINTS = 4001
GRID_WIDTH_SD = 10.0


class Payoff(str, enum.Enum):
    CALL = "call"
    PUT = "put"

    def __call__(self, prices: np.ndarray, strike: float) -> np.ndarray:
        if self is Payoff.CALL:
            return np.maximum(prices - strike, 0.0)
        return np.maximum(strike - prices, 0.0)


@dataclass(frozen=True)
class LatticeSpec:
    """
    One pricing run: spot, strike and the time partition.

    ``dt`` and ``rf`` are either scalars (uniform partition, constant rate)
    or sequences with one entry per step.
    """

    s0: float
    strike: float
    steps: int
    dt: float | tuple = 1.0 / 252
    rf: float | tuple = 0.0
    payoff: Payoff = Payoff.CALL

    def __post_init__(self):
        if not self.s0 > 0:
            raise DomainError(f"s0 must be positive, got {self.s0}")
        if self.strike < 0:
            raise DomainError(f"strike must be non-negative, got {self.strike}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise DomainError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "payoff", Payoff(self.payoff))
        for name in ("dt", "rf"):
            value = getattr(self, name)
            if np.ndim(value) > 0:
                value = tuple(float(v) for v in value)
                if len(value) != self.steps:
                    raise DomainError(f"{name} needs one entry per step")
                object.__setattr__(self, name, value)
        if np.any(self.dts <= 0):
            raise DomainError("every step duration must be positive")

    @classmethod
    def uniform(cls, s0, strike, maturity, steps, rf=0.0, payoff=Payoff.CALL) -> "LatticeSpec":
        return cls(s0=s0, strike=strike, steps=steps, dt=maturity / steps, rf=rf, payoff=payoff)

    @property
    def dts(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.dt, dtype=float), (self.steps,))

    @property
    def rfs(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.rf, dtype=float), (self.steps,))

    @property
    def maturity(self) -> float:
        return float(np.sum(self.dts))

    @property
    def is_uniform(self) -> bool:
        return np.ndim(self.dt) == 0 and np.ndim(self.rf) == 0


@dataclass(frozen=True)
class StepMoves:
    u: float
    d: float
    q: float
    p: float


@dataclass(frozen=True)
class PricingResult:
    price: float
    q_min: float
    q_max: float
    arb_violation: bool
    method: str = "recombining"
    flags: tuple = ()


def updown_weights(p: float) -> tuple[float, float]:
    """(p^u, p^d) = (sqrt((1-p)/p), sqrt(p/(1-p)))."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"up-probability must lie in (0, 1), got {p}")
    return math.sqrt((1.0 - p) / p), math.sqrt(p / (1.0 - p))


def arith_q(u: float, d: float, rf: float, dt: float) -> float:
    return (rf * dt - d) / (u - d)


def log_q(u: float, d: float, rf: float, dt: float) -> float:
    # expm1 keeps the one-step martingale exact to round-off for tiny moves
    return (math.expm1(rf * dt) - math.expm1(d)) / (math.expm1(u) - math.expm1(d))


def arith_moves(drift: float, vol: float, p: float, dt: float, rf: float) -> StepMoves:
    pu, pd = updown_weights(p)
    sq = math.sqrt(dt)
    u = drift * dt + vol * pu * sq
    d = drift * dt - vol * pd * sq
    return StepMoves(u=u, d=d, q=arith_q(u, d, rf, dt), p=p)


def log_moves(mu: float, conv_vol: float, vol: float, p: float, dt: float, rf: float) -> StepMoves:
    """Log-tree moves with convexity ``conv_vol`` and diffusion ``vol`` (may differ)."""
    pu, pd = updown_weights(p)
    sq = math.sqrt(dt)
    half = 0.5 * conv_vol**2
    u = (mu - half * pu**2) * dt + vol * pu * sq
    d = (mu - half * pd**2) * dt - vol * pd * sq
    return StepMoves(u=u, d=d, q=log_q(u, d, rf, dt), p=p)


def moves_arithmetic(params: ModelParams, dt: float, rf: float = 0.0) -> StepMoves:
    if params.convention is not Convention.ARITHMETIC:
        raise DomainError("moves_arithmetic needs arithmetic-convention parameters")
    return arith_moves(params.mu, params.sigma, params.p, dt, rf)


def moves_log(params: ModelParams, dt: float, rf: float = 0.0) -> StepMoves:
    if params.convention is not Convention.LOG:
        raise DomainError("moves_log needs log-convention parameters")
    return log_moves(params.mu, params.sigma, params.sigma, params.p, dt, rf)


def moves_log_return(mu_r: float, sigma: float, p: float, dt: float, rf: float = 0.0) -> StepMoves:
    """Log-tree moves parameterized by the log-return drift (no convexity term)."""
    pu, pd = updown_weights(p)
    sq = math.sqrt(dt)
    u = mu_r * dt + sigma * pu * sq
    d = mu_r * dt - sigma * pd * sq
    return StepMoves(u=u, d=d, q=log_q(u, d, rf, dt), p=p)


def moves_for(params: ModelParams, dt: float, rf: float = 0.0) -> StepMoves:
    if params.convention is Convention.LOG:
        return moves_log(params, dt, rf)
    return moves_arithmetic(params, dt, rf)


def check_no_arbitrage(moves: StepMoves, rf: float, dt: float) -> bool:
    """0 < 1 + D < 1 + rf dt < 1 + U, all strict."""
    return 0.0 < 1.0 + moves.d < 1.0 + rf * dt < 1.0 + moves.u


def sharpe_ratio(params: ModelParams, rf: float) -> float:
    """Instantaneous Sharpe ratio in the parameters' own convention."""
    if not params.sigma > 0:
        raise DomainError("Sharpe ratio needs positive sigma")
    if params.convention is Convention.LOG:
        return (params.mu - 0.5 * params.sigma**2 - rf) / params.sigma
    return (params.mu - rf) / params.sigma


def esg_dividend_yield(params_lambda: ModelParams, params_zero: ModelParams, rf: float) -> float:
    """Yield from ESG valuation: sigma_0 * (Theta_lambda - Theta_0)."""
    if params_lambda.convention is not params_zero.convention:
        raise DomainError("dividend yield needs both parameter sets in one convention")
    return params_zero.sigma * (sharpe_ratio(params_lambda, rf) - sharpe_ratio(params_zero, rf))


def bsm_call(s0: float, strike: float, rf: float, sigma: float, maturity: float) -> float:
    """Black-Scholes-Merton European call."""
    if strike <= 0:
        return float(s0)
    disc_k = strike * math.exp(-rf * maturity)
    if sigma <= 0 or maturity <= 0:
        return max(s0 - disc_k, 0.0)
    vol = sigma * math.sqrt(maturity)
    d1 = (math.log(s0 / strike) + (rf + 0.5 * sigma**2) * maturity) / vol
    d2 = d1 - vol
    return float(s0 * norm.cdf(d1) - disc_k * norm.cdf(d2))


# --------------------------------------------------------------------------
# Pricing
# --------------------------------------------------------------------------

def _growth(convention: Convention, x: np.ndarray) -> np.ndarray:
    if convention is Convention.LOG:
        return np.exp(x)
    return 1.0 + x


def _discount(convention: Convention, rf: np.ndarray, dt: np.ndarray) -> np.ndarray:
    if convention is Convention.LOG:
        return np.exp(-rf * dt)
    return 1.0 / (1.0 + rf * dt)


def _result(price: float, qs: np.ndarray, method: str) -> PricingResult:
    q_min, q_max = float(np.min(qs)), float(np.max(qs))
    return PricingResult(
        price=float(price),
        q_min=q_min,
        q_max=q_max,
        arb_violation=bool(q_min < 0.0 or q_max > 1.0),
        method=method,
    )


def _price_recombining(spec, moves, convention, disc) -> float:
    n = spec.steps
    fu, fd = _growth(convention, np.array([moves.u, moves.d]))
    j = np.arange(n + 1)
    values = spec.payoff(spec.s0 * fu**j * fd ** (n - j), spec.strike)
    a, b = disc * moves.q, disc * (1.0 - moves.q)
    scratch = np.empty(n)
    # in-place rolling layer: v[i] <- b*v[i] + a*v[i+1]
    for m in range(n, 0, -1):
        np.multiply(values[1 : m + 1], a, out=scratch[:m])
        values[:m] *= b
        values[:m] += scratch[:m]
    return float(values[0])


def _price_paths(spec, fu, fd, qs, discs) -> float:
    prices = np.array([spec.s0])
    for k in range(spec.steps):
        prices = np.stack([prices * fd[k], prices * fu[k]], axis=-1).reshape(-1)
    values = spec.payoff(prices, spec.strike)
    for k in reversed(range(spec.steps)):
        pairs = values.reshape(-1, 2)
        values = discs[k] * (qs[k] * pairs[:, 1] + (1.0 - qs[k]) * pairs[:, 0])
    return float(values[0])


def terminal_grid(s0, fu, fd, qs, points=GRID_POINTS, width_sd=GRID_WIDTH_SD):
    """
    Risk-neutral terminal distribution of a non-recombining tree on a grid.

    Each step sends the mass at every grid price x to x*fu (weight q) and
    x*fd (weight 1-q); landing points are split between their two grid
    neighbours linearly in price, which keeps total mass and expected price
    exact. Returns (grid prices, probabilities).
    """
    fu, fd, qs = (np.asarray(v, dtype=float) for v in (fu, fd, qs))
    if np.any(fu <= 0) or np.any(fd <= 0):
        raise NonPositivePriceError("a growth factor is non-positive; prices leave the grid")
    lfu, lfd = np.log(fu), np.log(fd)
    qc = np.clip(qs, 0.0, 1.0)
    mean = np.sum(qc * lfu + (1 - qc) * lfd)
    var = np.sum(qc * (1 - qc) * (lfu - lfd) ** 2)
    spread = width_sd * math.sqrt(max(var, 1e-24))
    lo = min(math.log(s0) + mean - spread, math.log(s0) - 1e-9)
    hi = max(math.log(s0) + mean + spread, math.log(s0) + 1e-9)
    logs = np.linspace(lo, hi, points)
    grid = np.exp(logs)
    step = logs[1] - logs[0]

    mass = np.zeros(points)
    _deposit(mass, grid, logs[0], step, np.array([float(s0)]), np.array([1.0]))
    for k in range(len(qs)):
        live = mass != 0
        src, w = grid[live], mass[live]
        nxt = np.zeros(points)
        _deposit(nxt, grid, logs[0], step, src * fu[k], w * qs[k])
        _deposit(nxt, grid, logs[0], step, src * fd[k], w * (1.0 - qs[k]))
        mass = nxt
    return grid, mass


def _deposit(mass, grid, log0, step, where, weight):
    n = len(grid)
    pos = (np.log(where) - log0) / step
    idx = np.clip(np.floor(pos).astype(int), 0, n - 2)
    left, right = grid[idx], grid[idx + 1]
    # outside the grid the split extrapolates linearly, so the mean stays exact
    frac = (where - left) / (right - left)
    mass += np.bincount(idx, weight * (1.0 - frac), minlength=n)
    mass += np.bincount(idx + 1, weight * frac, minlength=n)


@dataclass(frozen=True)
class TerminalDistribution:
    """
    Discounted terminal distribution of a step-varying tree.

    Holds the grid distribution at two resolutions so that any payoff can be
    priced with Richardson extrapolation; built once per maturity and reused
    across strikes.
    """

    coarse: tuple
    fine: tuple
    discount: float

    def price(self, strike: float, payoff: Payoff = Payoff.CALL) -> float:
        payoff = Payoff(payoff)
        (g1, m1), (g2, m2) = self.coarse, self.fine
        v1 = float(np.dot(m1, payoff(g1, strike)))
        v2 = float(np.dot(m2, payoff(g2, strike)))
        # projection error is second order in the grid spacing
        return self.discount * (v2 + (v2 - v1) / 3.0)


def terminal_distribution(
    s0: float,
    moves: Sequence[StepMoves],
    convention: Convention | str,
    discount: float,
    points: int = GRID_POINTS,
    width_sd: float = GRID_WIDTH_SD,
) -> TerminalDistribution:
    convention = Convention.parse(convention)
    fu = _growth(convention, np.array([m.u for m in moves]))
    fd = _growth(convention, np.array([m.d for m in moves]))
    qs = np.array([m.q for m in moves])
    coarse = terminal_grid(s0, fu, fd, qs, points, width_sd)
    fine = terminal_grid(s0, fu, fd, qs, 2 * points - 1, width_sd)
    return TerminalDistribution(coarse=coarse, fine=fine, discount=float(discount))


def price_moves(
    spec: LatticeSpec,
    moves: StepMoves | Sequence[StepMoves],
    convention: Convention | str,
    max_exact_depth: int = MAX_EXACT_DEPTH,
    grid_points: int = GRID_POINTS,
) -> PricingResult:
    """
    Backward-induction price of ``spec.payoff`` on a tree with given moves.

    ``moves`` is one StepMoves for a recombining tree, or one per step.
    """
    convention = Convention.parse(convention)
    discs = _discount(convention, spec.rfs, spec.dts)
    if isinstance(moves, StepMoves):
        if not spec.is_uniform:
            raise DomainError("a single set of moves needs a uniform partition")
        price = _price_recombining(spec, moves, convention, float(discs[0]))
        return _result(price, np.array([moves.q]), "recombining")

    moves = list(moves)
    if len(moves) != spec.steps:
        raise DomainError(f"need {spec.steps} step moves, got {len(moves)}")
    if spec.is_uniform and all(m == moves[0] for m in moves):
        price = _price_recombining(spec, moves[0], convention, float(discs[0]))
        return _result(price, np.array([moves[0].q]), "recombining")

    us = np.array([m.u for m in moves])
    ds = np.array([m.d for m in moves])
    qs = np.array([m.q for m in moves])
    fu, fd = _growth(convention, us), _growth(convention, ds)
    if spec.steps <= max_exact_depth:
        return _result(_price_paths(spec, fu, fd, qs, discs), qs, "paths")
    dist = terminal_distribution(spec.s0, moves, convention, float(np.prod(discs)), grid_points)
    return _result(dist.price(spec.strike, spec.payoff), qs, "grid")


def price_european(
    spec: LatticeSpec,
    params: ModelParams,
    max_exact_depth: int = MAX_EXACT_DEPTH,
) -> PricingResult:
    """Price a European option on the plain ESG-valued tree of ``params``."""
    if spec.is_uniform:
        moves = moves_for(params, float(spec.dts[0]), float(spec.rfs[0]))
    else:
        moves = [moves_for(params, dt, rf) for dt, rf in zip(spec.dts, spec.rfs)]
    return price_moves(spec, moves, params.convention, max_exact_depth=max_exact_depth)
