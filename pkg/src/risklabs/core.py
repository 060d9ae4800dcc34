"""Shared domain types and validation.

Conventions used throughout the package:

* Returns are natural-log returns, ``r_t = ln(P_t / P_{t-1})``, so they add
  across horizons.
* Volatility is always handled as the natural log of the sample standard
  deviation of daily log returns over a horizon.
* Dates are plain calendar dates restricted to the trading days present in
  the data; gaps (weekends, holidays) carry no special semantics.
* All values are immutable after construction and safe to share across
  threads.  Arrays are stored as read-only float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime
from typing import Any, Mapping, Optional, Sequence

import numpy as np

#: Forecast horizons in trading days.  Fixed; every RiskForecast carries
#: exactly these four keys.
HORIZONS: tuple[int, ...] = (3, 7, 15, 30)

#: Trading days of price history feeding each training sample.
LOOKBACK_DAYS = 30

#: Quantile level of the 1-day value-at-risk output.
VAR_ALPHA = 0.05


@dataclass(frozen=True)
class EmbeddingDims:
    """Expected dimensions of the precomputed feature vectors.

    Text/audio/news embeddings arrive precomputed; the analyzer feature
    vector is produced by :mod:`risklabs.analyzer`.
    """

    text: int = 16
    audio: int = 8
    news: int = 16
    analyzer: int = 4


class ValidationError(ValueError):
    """Raised when a domain value violates its invariants."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class DataFormatError(ValueError):
    """Raised on malformed input files (carries file/line context)."""


class NumericError(RuntimeError):
    """Raised when a computation produces non-finite values."""


def _freeze(obj: Any, name: str, value: np.ndarray) -> None:
    arr = np.asarray(value, dtype=np.float64)
    arr.flags.writeable = False
    object.__setattr__(obj, name, arr)


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Dated close prices for one ticker, in ascending date order."""

    ticker: str
    dates: tuple[date, ...]
    closes: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "dates", tuple(self.dates))
        _freeze(self, "closes", self.closes)

    def __len__(self) -> int:
        return len(self.dates)

    def to_dict(self) -> dict:
        return {
            "ticker": self.ticker,
            "dates": [d.isoformat() for d in self.dates],
            "closes": [float(c) for c in self.closes],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PriceSeries":
        return cls(
            ticker=d["ticker"],
            dates=tuple(date.fromisoformat(s) for s in d["dates"]),
            closes=np.asarray(d["closes"], dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class ReturnSeries:
    """Daily log returns; each return is dated by the later of its two days."""

    ticker: str
    dates: tuple[date, ...]
    returns: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "dates", tuple(self.dates))
        _freeze(self, "returns", self.returns)

    def __len__(self) -> int:
        return len(self.dates)

    def to_dict(self) -> dict:
        return {
            "ticker": self.ticker,
            "dates": [d.isoformat() for d in self.dates],
            "returns": [float(r) for r in self.returns],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ReturnSeries":
        return cls(
            ticker=d["ticker"],
            dates=tuple(date.fromisoformat(s) for s in d["dates"]),
            returns=np.asarray(d["returns"], dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class Segment:
    """One earnings-call segment: transcript text plus precomputed vectors."""

    text: str
    text_embedding: np.ndarray
    audio_features: np.ndarray

    def __post_init__(self) -> None:
        _freeze(self, "text_embedding", self.text_embedding)
        _freeze(self, "audio_features", self.audio_features)

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "text_embedding": [float(x) for x in self.text_embedding],
            "audio_features": [float(x) for x in self.audio_features],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Segment":
        return cls(
            text=d["text"],
            text_embedding=np.asarray(d["text_embedding"], dtype=np.float64),
            audio_features=np.asarray(d["audio_features"], dtype=np.float64),
        )


@dataclass(frozen=True, eq=False)
class EarningsEvent:
    """A single earnings call: one or more segments for one ticker/date."""

    ticker: str
    event_date: date
    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))

    @property
    def transcript(self) -> str:
        return "\n".join(s.text for s in self.segments)

    def to_dict(self) -> dict:
        return {
            "ticker": self.ticker,
            "event_date": self.event_date.isoformat(),
            "segments": [s.to_dict() for s in self.segments],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EarningsEvent":
        return cls(
            ticker=d["ticker"],
            event_date=date.fromisoformat(d["event_date"]),
            segments=tuple(Segment.from_dict(s) for s in d["segments"]),
        )


@dataclass(frozen=True)
class NewsOutcome:
    """Realized market reaction to a news item (next trading day)."""

    next_day_return: float
    vol_change: float

    def to_dict(self) -> dict:
        return {
            "next_day_return": float(self.next_day_return),
            "vol_change": float(self.vol_change),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NewsOutcome":
        return cls(
            next_day_return=float(d["next_day_return"]),
            vol_change=float(d["vol_change"]),
        )


@dataclass(frozen=True, eq=False)
class NewsItem:
    """A timestamped headline with its embedding and optional realized outcome.

    The outcome may only be present when the next trading day exists in the
    price data; loaders tolerate its absence.
    """

    timestamp: datetime
    ticker: str
    headline: str
    embedding: np.ndarray
    outcome: Optional[NewsOutcome] = None

    def __post_init__(self) -> None:
        _freeze(self, "embedding", self.embedding)

    def to_dict(self) -> dict:
        d = {
            "ts": self.timestamp.isoformat(),
            "ticker": self.ticker,
            "headline": self.headline,
            "embedding": [float(x) for x in self.embedding],
        }
        if self.outcome is not None:
            d["outcome"] = self.outcome.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "NewsItem":
        outcome = d.get("outcome")
        return cls(
            timestamp=datetime.fromisoformat(d["ts"]),
            ticker=d["ticker"],
            headline=d["headline"],
            embedding=np.asarray(d["embedding"], dtype=np.float64),
            outcome=NewsOutcome.from_dict(outcome) if outcome is not None else None,
        )


@dataclass(frozen=True)
class RiskForecast:
    """Model output for one as-of date.

    ``vol`` maps each horizon in :data:`HORIZONS` to predicted log realized
    volatility; ``var_1d`` is the predicted 0.05-quantile of the next-day
    log return (typically negative).
    """

    as_of: date
    vol: Mapping[int, float]
    var_1d: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "vol", dict(self.vol))

    def to_dict(self) -> dict:
        return {
            "as_of": self.as_of.isoformat(),
            "vol": {str(h): float(v) for h, v in self.vol.items()},
            "var_1d": float(self.var_1d),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RiskForecast":
        return cls(
            as_of=date.fromisoformat(d["as_of"]),
            vol={int(h): float(v) for h, v in d["vol"].items()},
            var_1d=float(d["var_1d"]),
        )


@dataclass(frozen=True)
class PresenceFlags:
    """Which data sources contributed to a sample."""

    prices: bool
    earnings: bool
    news: bool

    def as_vector(self) -> np.ndarray:
        return np.array(
            [float(self.prices), float(self.earnings), float(self.news)]
        )

    def to_dict(self) -> dict:
        return {"prices": self.prices, "earnings": self.earnings, "news": self.news}

    @classmethod
    def from_dict(cls, d: Mapping) -> "PresenceFlags":
        return cls(prices=d["prices"], earnings=d["earnings"], news=d["news"])


@dataclass(frozen=True)
class SampleLabels:
    """Supervision targets: realized log-vol per horizon plus next-day return.

    Labels are computed strictly from data dated after the sample's as-of
    date; the as-of day's own return is excluded from every label window.
    """

    vol: Mapping[int, float]
    next_day_return: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "vol", dict(self.vol))

    def to_dict(self) -> dict:
        return {
            "vol": {str(h): float(v) for h, v in self.vol.items()},
            "next_day_return": float(self.next_day_return),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SampleLabels":
        return cls(
            vol={int(h): float(v) for h, v in d["vol"].items()},
            next_day_return=float(d["next_day_return"]),
        )


@dataclass(frozen=True, eq=False)
class TrainingSample:
    """One anchored observation: 30-day lookback, optional event and news.

    ``labels`` is ``None`` only for prediction-time samples built from data
    with no visible future; training requires labels.
    """

    as_of: date
    lookback_returns: np.ndarray
    earnings: Optional[EarningsEvent]
    news_window: tuple[NewsItem, ...]
    labels: Optional[SampleLabels]
    presence: PresenceFlags

    def __post_init__(self) -> None:
        _freeze(self, "lookback_returns", self.lookback_returns)
        object.__setattr__(self, "news_window", tuple(self.news_window))

    def to_dict(self) -> dict:
        return {
            "as_of": self.as_of.isoformat(),
            "lookback_returns": [float(r) for r in self.lookback_returns],
            "earnings": self.earnings.to_dict() if self.earnings else None,
            "news_window": [n.to_dict() for n in self.news_window],
            "labels": self.labels.to_dict() if self.labels else None,
            "presence": self.presence.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainingSample":
        return cls(
            as_of=date.fromisoformat(d["as_of"]),
            lookback_returns=np.asarray(d["lookback_returns"], dtype=np.float64),
            earnings=EarningsEvent.from_dict(d["earnings"]) if d["earnings"] else None,
            news_window=tuple(NewsItem.from_dict(n) for n in d["news_window"]),
            labels=SampleLabels.from_dict(d["labels"]) if d["labels"] else None,
            presence=PresenceFlags.from_dict(d["presence"]),
        )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _check_finite(violations: list[str], path: str, values: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(np.atleast_1d(values)))
    for i in bad[:5]:
        violations.append(f"{path}[{i}] finite violated (got {np.atleast_1d(values)[i]})")


def _validate_prices(p: PriceSeries, out: list[str]) -> None:
    if len(p.closes) != len(p.dates):
        out.append(
            f"closes.len == dates.len violated ({len(p.closes)} != {len(p.dates)})"
        )
    for i in range(len(p.dates) - 1):
        if p.dates[i] >= p.dates[i + 1]:
            out.append(
                f"dates[{i}] < dates[{i + 1}] violated "
                f"({p.dates[i]} >= {p.dates[i + 1]})"
            )
    for i, c in enumerate(p.closes):
        if not (np.isfinite(c) and c > 0):
            out.append(f"closes[{i}] > 0 violated (got {c})")


def _validate_returns(r: ReturnSeries, out: list[str]) -> None:
    if len(r.returns) != len(r.dates):
        out.append(
            f"returns.len == dates.len violated ({len(r.returns)} != {len(r.dates)})"
        )
    _check_finite(out, "returns", r.returns)


def _validate_event(e: EarningsEvent, out: list[str], dims: Optional[EmbeddingDims]) -> None:
    if len(e.segments) < 1:
        out.append("segments nonempty violated (got 0 segments)")
        return
    d_t = len(e.segments[0].text_embedding)
    d_a = len(e.segments[0].audio_features)
    for i, s in enumerate(e.segments):
        if len(s.text_embedding) != d_t:
            out.append(
                f"segments[{i}].text_embedding D_t mismatch "
                f"({len(s.text_embedding)} != {d_t})"
            )
        if len(s.audio_features) != d_a:
            out.append(
                f"segments[{i}].audio_features D_a mismatch "
                f"({len(s.audio_features)} != {d_a})"
            )
        _check_finite(out, f"segments[{i}].text_embedding", s.text_embedding)
        _check_finite(out, f"segments[{i}].audio_features", s.audio_features)
    if dims is not None:
        if d_t != dims.text:
            out.append(f"segments[0].text_embedding D_t mismatch ({d_t} != {dims.text})")
        if d_a != dims.audio:
            out.append(f"segments[0].audio_features D_a mismatch ({d_a} != {dims.audio})")


def _validate_news(n: NewsItem, out: list[str], dims: Optional[EmbeddingDims]) -> None:
    if n.embedding.ndim != 1:
        out.append(f"embedding 1-D violated (got ndim {n.embedding.ndim})")
    _check_finite(out, "embedding", n.embedding)
    if dims is not None and len(n.embedding) != dims.news:
        out.append(f"embedding D_n mismatch ({len(n.embedding)} != {dims.news})")
    if n.outcome is not None:
        if not np.isfinite(n.outcome.next_day_return):
            out.append("outcome.next_day_return finite violated")
        if not np.isfinite(n.outcome.vol_change):
            out.append("outcome.vol_change finite violated")


def _validate_forecast(f: RiskForecast, out: list[str]) -> None:
    if tuple(sorted(f.vol)) != HORIZONS:
        out.append(f"vol keys == {HORIZONS} violated (got {tuple(sorted(f.vol))})")
    for h, v in f.vol.items():
        if not np.isfinite(v):
            out.append(f"vol[{h}] finite violated (got {v})")
    if not np.isfinite(f.var_1d):
        out.append(f"var_1d finite violated (got {f.var_1d})")


def _validate_sample(s: TrainingSample, out: list[str]) -> None:
    if len(s.lookback_returns) != LOOKBACK_DAYS:
        out.append(
            f"lookback_returns.len == {LOOKBACK_DAYS} violated "
            f"(got {len(s.lookback_returns)})"
        )
    _check_finite(out, "lookback_returns", s.lookback_returns)
    if s.labels is not None:
        if tuple(sorted(s.labels.vol)) != HORIZONS:
            out.append(
                f"labels.vol keys == {HORIZONS} violated "
                f"(got {tuple(sorted(s.labels.vol))})"
            )
        for h, v in s.labels.vol.items():
            if not np.isfinite(v):
                out.append(f"labels.vol[{h}] finite violated (got {v})")
    if s.presence.earnings != (s.earnings is not None):
        out.append("presence.earnings consistency violated")
    if s.presence.news != (len(s.news_window) > 0):
        out.append("presence.news consistency violated")
    for i, n in enumerate(s.news_window):
        if n.timestamp.date() > s.as_of:
            out.append(
                f"news_window[{i}].timestamp <= as_of violated "
                f"({n.timestamp.date()} > {s.as_of})"
            )


def validate(obj: Any, dims: Optional[EmbeddingDims] = None) -> list[str]:
    """Collect every invariant violation of a domain value.

    Returns an empty list iff the value is well-formed.  Never raises;
    messages carry the offending field path.  ``dims``, when given, also
    checks embedding dimensions against the configured constants.
    """
    out: list[str] = []
    if isinstance(obj, PriceSeries):
        _validate_prices(obj, out)
    elif isinstance(obj, ReturnSeries):
        _validate_returns(obj, out)
    elif isinstance(obj, EarningsEvent):
        _validate_event(obj, out, dims)
    elif isinstance(obj, NewsItem):
        _validate_news(obj, out, dims)
    elif isinstance(obj, RiskForecast):
        _validate_forecast(obj, out)
    elif isinstance(obj, TrainingSample):
        _validate_sample(obj, out)
    else:
        raise TypeError(f"no validator for {type(obj).__name__}")
    return out


def require_valid(obj: Any, dims: Optional[EmbeddingDims] = None, context: str = "") -> None:
    """Raise :class:`ValidationError` if ``obj`` has any violations."""
    violations = validate(obj, dims)
    if violations:
        if context:
            violations = [f"{context}: {v}" for v in violations]
        raise ValidationError(violations)
