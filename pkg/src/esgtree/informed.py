"""
Informed-trader trees
=====================

A trader with information intensity ``delta`` is right about the next move
with probability (1 + delta*sqrt(dt))/2 and holds N forward contracts in the
direction of the signal. N is chosen to maximize the strategy's
instantaneous Sharpe ratio:

* arithmetic returns: closed form N = N_delta / theta
* log returns: the real root of N^3 + (2+a) N - 2 N_E = 0

The optimized strategy is replicated by a two-branch tree whose drift and
volatility absorb the information, so options are priced on the ordinary
lattice machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ComplexVolatilityError, DomainError, NonPositivePriceError, SingularityError
from .lattice import (
    LatticeSpec,
    PricingResult,
    StepMoves,
    arith_moves,
    log_moves,
    price_moves,
)
from .returns import Convention, ModelParams

THETA_FLOOR = 1e-8


@dataclass(frozen=True)
class InfoSpec:
    """Information intensity ``delta`` (per sqrt of time)."""

    delta: float

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise DomainError(f"information intensity must be >= 0, got {self.delta}")

    def check(self, dt: float) -> None:
        if not self.delta < 1.0 / math.sqrt(dt):
            raise DomainError(
                f"delta={self.delta} must stay below 1/sqrt(dt)={1.0 / math.sqrt(dt):.6g}"
            )

    def p_correct(self, dt: float) -> float:
        """Probability that the signal is right over one step of length ``dt``."""
        self.check(dt)
        return 0.5 * (1.0 + self.delta * math.sqrt(dt))


@dataclass(frozen=True)
class InformedParams:
    """
    Optimal strategy quantities.

    ``n_delta`` is N_delta (arithmetic) or N_E (log). ``sigma1``/``sigma2``
    are the effective convexity and diffusion volatilities of the log tree;
    under the arithmetic convention sigma1 == sigma2 is the informed volatility.
    """

    convention: Convention
    theta: float
    n_delta: float
    n_max: float
    theta_opt: float
    sigma1: float
    sigma2: float
    drift: float


# --------------------------------------------------------------------------
# Arithmetic convention
# --------------------------------------------------------------------------

def n_delta_arith(delta: float, p: float) -> float:
    """N_delta = 2 delta sqrt(p(1-p))."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    if delta < 0:
        raise DomainError(f"delta must be non-negative, got {delta}")
    return 2.0 * delta * math.sqrt(p * (1.0 - p))


def informed_sharpe_arith(theta: float, n_delta: float, n: float) -> float:
    """Strategy Sharpe ratio (theta + N_delta N) / sqrt(1 + N^2)."""
    return (theta + n_delta * n) / math.sqrt(1.0 + n * n)


def optimal_n_arith(n_delta: float, theta: float, theta_floor: float = THETA_FLOOR) -> float:
    """
    Stationary contract count N_delta / theta.

    It is the maximizer for theta > 0; for theta < 0 the same point is the
    minimizer of the strategy Sharpe ratio and is returned unchanged.
    """
    if n_delta == 0.0:
        return 0.0
    if abs(theta) < theta_floor:
        raise SingularityError(f"|theta|={abs(theta):.3g} below floor {theta_floor:.3g}")
    return n_delta / theta


# --------------------------------------------------------------------------
# Log convention
# --------------------------------------------------------------------------

def n_e_log(delta: float, p: float, sigma: float) -> float:
    """N_E = 2 delta sqrt(p(1-p)) / sigma."""
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    return n_delta_arith(delta, p) / sigma


def informed_sharpe_log(sigma: float, a: float, n_e: float, n: float) -> float:
    """Log-strategy Sharpe ratio sigma/2 (a + 2 N_E N - N^2) / sqrt(1 + N^2)."""
    return 0.5 * sigma * (a + 2.0 * n_e * n - n * n) / math.sqrt(1.0 + n * n)


def _newton(n: float, pc: float, qc: float, iters: int = 3) -> float:
    for _ in range(iters):
        slope = 3.0 * n * n + pc
        if slope == 0.0:
            break
        step = (n * n * n + pc * n - qc) / slope
        if not math.isfinite(step):
            break
        n -= step
    return n


def cubic_real_roots(n_e: float, a: float) -> list[float]:
    """Real roots of N^3 + (2+a) N - 2 N_E = 0, Newton-polished."""
    pc = 2.0 + a
    qc = 2.0 * n_e
    b2 = n_e * n_e + (pc / 3.0) ** 3
    if b2 >= 0.0:
        b = math.sqrt(b2)
        # pick the sign that avoids cancellation, recover the partner from u*v = -P/3
        t = n_e + math.copysign(b, n_e) if n_e != 0.0 else b
        u = np.cbrt(t)
        root = 0.0 if u == 0.0 else float(u - pc / (3.0 * u))
        return [_newton(root, pc, qc)]
    r = math.sqrt(-pc / 3.0)
    cos_arg = max(-1.0, min(1.0, n_e / r**3))
    phi = math.acos(cos_arg)
    return [_newton(2.0 * r * math.cos((phi - 2.0 * math.pi * k) / 3.0), pc, qc) for k in range(3)]


def optimal_n_log(n_e: float, a: float, sigma: float = 1.0) -> float:
    """
    Sharpe-maximizing contract count of the log model.

    With a single real root of the cubic this is the closed-form Cardano
    root. When three real roots exist the one with the largest log-strategy
    Sharpe ratio is returned (``sigma`` only scales the ratio).
    """
    roots = cubic_real_roots(n_e, a)
    if len(roots) == 1:
        return roots[0]
    return max(roots, key=lambda n: informed_sharpe_log(sigma, a, n_e, n))


# --------------------------------------------------------------------------
# Strategy parameters, moves and yields
# --------------------------------------------------------------------------

def _theta(params: ModelParams, rf: float) -> float:
    return (params.mu - rf) / params.sigma


def informed_params(
    params: ModelParams,
    info: InfoSpec,
    rf: float,
    theta_floor: float = THETA_FLOOR,
) -> InformedParams:
    """Optimal contract count and effective tree parameters."""
    sigma, p = params.sigma, params.p
    theta = _theta(params, rf)
    if params.convention is Convention.ARITHMETIC:
        nd = n_delta_arith(info.delta, p)
        n = optimal_n_arith(nd, theta, theta_floor)
        vol = sigma * math.sqrt(1.0 + n * n)
        drift = params.mu + sigma * nd * n
        theta_opt = math.copysign(math.hypot(theta, nd), theta) if nd else theta
        return InformedParams(Convention.ARITHMETIC, theta, nd, n, theta_opt, vol, vol, drift)

    ne = n_e_log(info.delta, p, sigma)
    a = 2.0 * theta / sigma - 1.0
    n = optimal_n_log(ne, a, sigma)
    s1_sq = 1.0 + n * n - 2.0 * ne * n
    if s1_sq < 0.0:
        raise ComplexVolatilityError(
            f"effective convexity variance is negative (1 + N^2 - 2 N_E N = {s1_sq:.3g})"
        )
    sigma1 = sigma * math.sqrt(s1_sq)
    sigma2 = sigma * math.sqrt(1.0 + n * n)
    theta_opt = informed_sharpe_log(sigma, a, ne, n)
    return InformedParams(Convention.LOG, theta, ne, n, theta_opt, sigma1, sigma2, params.mu)


def informed_moves_arith(params: ModelParams, info: InfoSpec, rf: float, dt: float) -> StepMoves:
    """Replicating arithmetic tree: drift mu + sigma N_delta^2/theta, vol sigma sqrt(1+N^2)."""
    if params.convention is not Convention.ARITHMETIC:
        raise DomainError("informed_moves_arith needs arithmetic-convention parameters")
    info.check(dt)
    ip = informed_params(params, info, rf)
    return arith_moves(ip.drift, ip.sigma2, params.p, dt, rf)


def informed_moves_log(params: ModelParams, info: InfoSpec, rf: float, dt: float) -> StepMoves:
    """Replicating log tree with convexity volatility sigma1 and diffusion volatility sigma2."""
    if params.convention is not Convention.LOG:
        raise DomainError("informed_moves_log needs log-convention parameters")
    info.check(dt)
    ip = informed_params(params, info, rf)
    return log_moves(params.mu, ip.sigma1, ip.sigma2, params.p, dt, rf)


def informed_moves(params: ModelParams, info: InfoSpec, rf: float, dt: float) -> StepMoves:
    if params.convention is Convention.LOG:
        return informed_moves_log(params, info, rf, dt)
    return informed_moves_arith(params, info, rf, dt)


def informed_dividend_yield(params: ModelParams, info: InfoSpec, rf: float) -> float:
    """
    Information-enhanced dividend yield.

    Arithmetic: sigma (sqrt(theta^2 + N_delta^2) - theta).
    Log: sigma [sqrt(1+N^2) (theta + sigma/2 (N^2 - 1)) - theta]; note this
    equals -sigma^2/2 rather than zero when delta = 0.
    """
    ip = informed_params(params, info, rf)
    sigma, theta = params.sigma, ip.theta
    if ip.convention is Convention.ARITHMETIC:
        return sigma * (math.hypot(theta, ip.n_delta) - theta)
    n2 = ip.n_max**2
    return sigma * (math.sqrt(1.0 + n2) * (theta + 0.5 * sigma * (n2 - 1.0)) - theta)


def price_informed(spec: LatticeSpec, params: ModelParams, info: InfoSpec) -> PricingResult:
    """European option on the informed replicating tree."""
    if spec.is_uniform:
        moves = informed_moves(params, info, float(spec.rfs[0]), float(spec.dts[0]))
    else:
        moves = [informed_moves(params, info, rf, dt) for dt, rf in zip(spec.dts, spec.rfs)]
    return price_moves(spec, moves, params.convention)


# --------------------------------------------------------------------------
# Monte-Carlo check of the four-branch strategy
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StrategyMoments:
    """Sample moments of the one-step strategy return with their standard errors."""

    mean: float
    var: float
    mean_se: float
    var_se: float
    paths: int


def strategy_branches(
    moves: StepMoves, p_correct: float, n_contracts: float, rf: float, dt: float, convention
) -> tuple[np.ndarray, np.ndarray]:
    """
    Returns and probabilities of the four strategy branches.

    Order: (up, right), (down, right), (up, wrong), (down, wrong). The
    trader goes long when the signal says up, short otherwise.
    """
    convention = Convention.parse(convention)
    p = moves.p
    probs = np.array([p * p_correct, (1 - p) * p_correct, p * (1 - p_correct), (1 - p) * (1 - p_correct)])
    side = np.array([1.0, -1.0, -1.0, 1.0])
    if convention is Convention.ARITHMETIC:
        x = np.array([moves.u, moves.d, moves.u, moves.d])
        rets = x + side * n_contracts * (x - rf * dt)
        if np.any(rets <= -1.0):
            raise NonPositivePriceError("strategy value turns non-positive on some branch")
        return rets, probs
    g = np.exp(np.array([moves.u, moves.d, moves.u, moves.d]))
    gross = g + side * n_contracts * (g - math.exp(rf * dt))
    if np.any(gross <= 0.0):
        raise NonPositivePriceError("strategy value turns non-positive on some branch")
    return np.log(gross), probs


def simulate_informed_strategy(
    spec: LatticeSpec,
    params: ModelParams,
    info: InfoSpec,
    n_contracts: float,
    paths: int,
    seed: int,
) -> StrategyMoments:
    """Sample one-step strategy returns from the first step of ``spec``."""
    if paths < 1:
        raise DomainError("need at least one path")
    dt, rf = float(spec.dts[0]), float(spec.rfs[0])
    if params.convention is Convention.LOG:
        moves = log_moves(params.mu, params.sigma, params.sigma, params.p, dt, rf)
    else:
        moves = arith_moves(params.mu, params.sigma, params.p, dt, rf)
    rets, probs = strategy_branches(moves, info.p_correct(dt), n_contracts, rf, dt, params.convention)
    rng = np.random.default_rng(seed)
    sample = rets[rng.choice(4, size=paths, p=probs)]
    mean = float(np.mean(sample))
    if paths < 2:
        return StrategyMoments(mean, 0.0, math.inf, math.inf, paths)
    var = float(np.var(sample, ddof=1))
    m4 = float(np.mean((sample - mean) ** 4))
    return StrategyMoments(
        mean=mean,
        var=var,
        mean_se=math.sqrt(var / paths),
        var_se=math.sqrt(max(m4 - var * var, 0.0) / paths),
        paths=paths,
    )


__all__ = [
    "InfoSpec",
    "InformedParams",
    "StrategyMoments",
    "cubic_real_roots",
    "informed_dividend_yield",
    "informed_moves",
    "informed_moves_arith",
    "informed_moves_log",
    "informed_params",
    "informed_sharpe_arith",
    "informed_sharpe_log",
    "n_delta_arith",
    "n_e_log",
    "optimal_n_arith",
    "optimal_n_log",
    "price_informed",
    "simulate_informed_strategy",
    "strategy_branches",
]
