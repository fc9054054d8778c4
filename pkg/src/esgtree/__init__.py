"""ESG-valued binomial option pricing, informed-trader and path-dependent trees, and calibration."""

from .errors import (
    AlignmentError,
    ComplexVolatilityError,
    DegenerateVolatilityError,
    DomainError,
    EsgTreeError,
    InputError,
    NonPositivePriceError,
    NumericalError,
    SingularityError,
)
from .returns import (
    Convention,
    EsgSeries,
    ModelParams,
    RawEsgRecord,
    SeriesStats,
    align_esg,
    blend_returns,
    build_index,
    estimate_params,
    financial_returns,
    max_drawdown,
    normalize_esg,
    numeraire_prices,
    series_stats,
)
from .lattice import (
    LatticeSpec,
    Payoff,
    PricingResult,
    StepMoves,
    bsm_call,
    check_no_arbitrage,
    esg_dividend_yield,
    moves_arithmetic,
    moves_for,
    moves_log,
    price_european,
    price_moves,
)

__version__ = "0.1.0"
