"""Desk-scale risk forecasting: multi-horizon volatility and 1-day VaR.

Fuses price history, news embeddings and earnings-call features into a
multi-task neural forecaster, benchmarks it against GARCH(1,1), EWMA and
historical-simulation VaR, and backtests VaR coverage with the Kupiec
proportion-of-failures test.
"""

from .core import (
    HORIZONS,
    EarningsEvent,
    EmbeddingDims,
    NewsItem,
    NewsOutcome,
    PriceSeries,
    ReturnSeries,
    RiskForecast,
    TrainingSample,
    validate,
)

__all__ = [
    "HORIZONS",
    "EarningsEvent",
    "EmbeddingDims",
    "NewsItem",
    "NewsOutcome",
    "PriceSeries",
    "ReturnSeries",
    "RiskForecast",
    "TrainingSample",
    "validate",
]

__version__ = "0.1.0"
