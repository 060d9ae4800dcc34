"""Data ingestion, sample assembly, and synthetic dataset generation.

File formats
------------
* prices: CSV with header ``date,ticker,close``, ISO-8601 dates.
* news: JSON-lines, one record per line:
  ``{ts, ticker, headline, embedding: [...], outcome?: {next_day_return, vol_change}}``.
* events: JSON-lines:
  ``{ticker, event_date, segments: [{text, text_embedding: [...], audio_features: [...]}]}``.

The synthetic generator writes the same formats, so every downstream path
is format-identical for real and synthetic data.
"""

from __future__ import annotations

import csv
import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .classical import GarchParams
from .core import (
    HORIZONS,
    LOOKBACK_DAYS,
    DataFormatError,
    EarningsEvent,
    EmbeddingDims,
    NewsItem,
    NewsOutcome,
    PresenceFlags,
    PriceSeries,
    ReturnSeries,
    SampleLabels,
    Segment,
    TrainingSample,
    require_valid,
)

#: Sample standard deviations below this floor are clamped before the log.
VOL_FLOOR = 1e-8

_NEWS_TIME = time(16, 0)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def load_prices(path: str | Path) -> dict[str, PriceSeries]:
    """Load one validated PriceSeries per ticker from a CSV file.

    Rows may be interleaved across tickers; each series comes back sorted by
    date.  Malformed rows and duplicate (date, ticker) pairs raise
    :class:`DataFormatError` with the offending line number.
    """
    path = Path(path)
    rows: dict[str, list[tuple[date, float]]] = {}
    seen: set[tuple[date, str]] = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != ["date", "ticker", "close"]:
            raise DataFormatError(
                f"{path}:1: expected header 'date,ticker,close', got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                d = date.fromisoformat(row[0].strip())
                close = float(row[2])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            ticker = row[1].strip()
            if not ticker:
                raise DataFormatError(f"{path}:{lineno}: empty ticker")
            if (d, ticker) in seen:
                raise DataFormatError(f"{path}:{lineno}: duplicate (date, ticker) ({d}, {ticker})")
            seen.add((d, ticker))
            rows.setdefault(ticker, []).append((d, close))
    out: dict[str, PriceSeries] = {}
    for ticker, pairs in rows.items():
        pairs.sort(key=lambda p: p[0])
        series = PriceSeries(
            ticker=ticker,
            dates=tuple(p[0] for p in pairs),
            closes=np.array([p[1] for p in pairs]),
        )
        require_valid(series, context=f"{path} ticker {ticker}")
        out[ticker] = series
    return out


def _load_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc


def load_news(path: str | Path, dims: EmbeddingDims | None = None) -> list[NewsItem]:
    """Load news items from JSON-lines; missing outcomes are tolerated.

    A record with the wrong embedding dimension fails the whole load with
    an error naming the expected dimension; nothing is partially returned.
    """
    path = Path(path)
    dims = dims if dims is not None else EmbeddingDims()
    items: list[NewsItem] = []
    for lineno, rec in _load_jsonl(path):
        try:
            item = NewsItem.from_dict(rec)
        except (KeyError, ValueError, TypeError) as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
        if len(item.embedding) != dims.news:
            raise DataFormatError(
                f"{path}:{lineno}: embedding dim {len(item.embedding)} != expected D_n {dims.news}"
            )
        require_valid(item, dims, context=f"{path}:{lineno}")
        items.append(item)
    return items


def load_events(path: str | Path, dims: EmbeddingDims | None = None) -> list[EarningsEvent]:
    """Load earnings events from JSON-lines, validating embedding dims."""
    path = Path(path)
    dims = dims if dims is not None else EmbeddingDims()
    events: list[EarningsEvent] = []
    for lineno, rec in _load_jsonl(path):
        try:
            event = EarningsEvent.from_dict(rec)
        except (KeyError, ValueError, TypeError) as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
        if event.segments and len(event.segments[0].text_embedding) != dims.text:
            raise DataFormatError(
                f"{path}:{lineno}: text_embedding dim "
                f"{len(event.segments[0].text_embedding)} != expected D_t {dims.text}"
            )
        if event.segments and len(event.segments[0].audio_features) != dims.audio:
            raise DataFormatError(
                f"{path}:{lineno}: audio_features dim "
                f"{len(event.segments[0].audio_features)} != expected D_a {dims.audio}"
            )
        require_valid(event, dims, context=f"{path}:{lineno}")
        events.append(event)
    return events


# ---------------------------------------------------------------------------
# Derived series
# ---------------------------------------------------------------------------


def compute_returns(prices: PriceSeries) -> ReturnSeries:
    """Daily log returns r_t = ln(P_t / P_{t-1}); first price date dropped."""
    if len(prices) < 2:
        raise ValueError(f"need at least 2 prices, got {len(prices)}")
    closes = np.asarray(prices.closes)
    return ReturnSeries(
        ticker=prices.ticker,
        dates=prices.dates[1:],
        returns=np.diff(np.log(closes)),
    )


def realized_log_vol(returns: Sequence[float] | np.ndarray) -> float:
    """Log of the sample standard deviation of a window of daily log returns.

    Degenerate windows are floored: a sample std below ``VOL_FLOOR`` returns
    ``ln(VOL_FLOOR)`` so the log stays defined.
    """
    r = np.asarray(returns, dtype=np.float64)
    if len(r) < 2:
        raise ValueError(f"need at least 2 returns, got {len(r)}")
    std = float(np.std(r, ddof=1))
    return math.log(max(std, VOL_FLOOR))


# ---------------------------------------------------------------------------
# Sample assembly
# ---------------------------------------------------------------------------


def build_samples(
    prices: PriceSeries,
    news: Sequence[NewsItem],
    events: Sequence[EarningsEvent],
    horizons: Sequence[int] = HORIZONS,
    anchor: str = "auto",
) -> tuple[list[TrainingSample], int]:
    """Assemble leakage-free training samples from aligned data.

    Anchoring: ``"event"`` creates one sample per earnings event;
    ``"daily"`` creates one per eligible trading day (attaching an event
    when one falls on that day, which backtesting needs); ``"auto"`` picks
    ``"event"`` when this ticker has events, else ``"daily"``.

    Each sample needs 30 lookback returns and 30 future returns for the
    longest label window; anchors failing either are silently skipped and
    counted in the returned skip count.  Labels use only returns dated
    strictly after the anchor.
    """
    if anchor not in ("auto", "daily", "event"):
        raise ValueError(f"unknown anchor mode {anchor!r}")
    rets = compute_returns(prices) if len(prices) >= 2 else None
    ticker_events = [e for e in events if e.ticker == prices.ticker]
    ticker_news = sorted(
        (n for n in news if n.ticker == prices.ticker), key=lambda n: n.timestamp
    )
    if anchor == "auto":
        anchor = "event" if ticker_events else "daily"

    date_index = {d: i for i, d in enumerate(prices.dates)}
    events_by_date = {e.event_date: e for e in ticker_events}
    max_h = max(horizons)

    if anchor == "event":
        anchors = []
        skipped = 0
        for e in ticker_events:
            idx = date_index.get(e.event_date)
            if idx is None:
                skipped += 1
                continue
            anchors.append(idx)
    else:
        anchors = list(range(len(prices)))
        skipped = 0

    samples: list[TrainingSample] = []
    n_prices = len(prices)
    rr = rets.returns if rets is not None else np.empty(0)
    for i in sorted(set(anchors)):
        if i < LOOKBACK_DAYS or i + max_h > n_prices - 1:
            skipped += 1
            continue
        as_of = prices.dates[i]
        lookback = rr[i - LOOKBACK_DAYS : i]
        labels = SampleLabels(
            vol={h: realized_log_vol(rr[i : i + h]) for h in horizons},
            next_day_return=float(rr[i]),
        )
        window_items = tuple(
            n
            for n in ticker_news
            if prices.dates[i - LOOKBACK_DAYS + 1] <= n.timestamp.date() <= as_of
        )
        event = events_by_date.get(as_of)
        samples.append(
            TrainingSample(
                as_of=as_of,
                lookback_returns=lookback.copy(),
                earnings=event,
                news_window=window_items,
                labels=labels,
                presence=PresenceFlags(
                    prices=True,
                    earnings=event is not None,
                    news=len(window_items) > 0,
                ),
            )
        )
    return samples, skipped


def feature_sample(
    prices: PriceSeries,
    news: Sequence[NewsItem],
    events: Sequence[EarningsEvent],
    as_of: date,
) -> TrainingSample:
    """Label-free sample for prediction at ``as_of`` from data up to ``as_of``.

    Raises if the lookback window cannot be filled.
    """
    date_index = {d: i for i, d in enumerate(prices.dates)}
    i = date_index.get(as_of)
    if i is None:
        raise ValueError(f"as_of {as_of} not a trading day of {prices.ticker}")
    if i < LOOKBACK_DAYS:
        raise ValueError(
            f"need {LOOKBACK_DAYS} lookback returns before {as_of}, have {i}"
        )
    rr = compute_returns(prices).returns
    window_items = tuple(
        n
        for n in sorted(news, key=lambda n: n.timestamp)
        if n.ticker == prices.ticker
        and prices.dates[i - LOOKBACK_DAYS + 1] <= n.timestamp.date() <= as_of
    )
    event = next(
        (e for e in events if e.ticker == prices.ticker and e.event_date == as_of),
        None,
    )
    return TrainingSample(
        as_of=as_of,
        lookback_returns=rr[i - LOOKBACK_DAYS : i].copy(),
        earnings=event,
        news_window=window_items,
        labels=None,
        presence=PresenceFlags(
            prices=True, earnings=event is not None, news=len(window_items) > 0
        ),
    )


# ---------------------------------------------------------------------------
# Dataset bundle
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MarketData:
    """Everything known about one ticker: prices, news, events."""

    prices: PriceSeries
    news: tuple[NewsItem, ...]
    events: tuple[EarningsEvent, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "news", tuple(self.news))
        object.__setattr__(self, "events", tuple(self.events))

    @property
    def ticker(self) -> str:
        return self.prices.ticker

    def returns(self) -> ReturnSeries:
        return compute_returns(self.prices)

    def truncated(self, as_of: date) -> "MarketData":
        """A view containing no information dated after ``as_of``.

        News outcomes whose realization day (the first trading day after the
        item) falls beyond ``as_of`` are stripped, so nothing reachable from
        the view depends on the future.
        """
        n_keep = bisect_right(self.prices.dates, as_of)
        prices = PriceSeries(
            ticker=self.prices.ticker,
            dates=self.prices.dates[:n_keep],
            closes=np.asarray(self.prices.closes)[:n_keep],
        )
        dates = self.prices.dates
        news = []
        for n in self.news:
            d = n.timestamp.date()
            if d > as_of:
                continue
            j = bisect_right(dates, d)
            realized = j < len(dates) and dates[j] <= as_of
            if n.outcome is not None and not realized:
                n = NewsItem(
                    timestamp=n.timestamp,
                    ticker=n.ticker,
                    headline=n.headline,
                    embedding=n.embedding,
                    outcome=None,
                )
            news.append(n)
        events = tuple(e for e in self.events if e.event_date <= as_of)
        return MarketData(prices=prices, news=tuple(news), events=events)


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegimeShift:
    """Multiplies the GARCH omega by ``vol_multiplier`` from ``day`` onward."""

    day: int
    vol_multiplier: float


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic dataset recipe with planted, attributable effects."""

    n_days: int
    garch: GarchParams
    news_rate: float = 0.0
    shock_factor: float = 1.0
    regime_shift: Optional[RegimeShift] = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_days < 100:
            raise ValueError(f"n_days >= 100 violated (got {self.n_days})")
        if not (0.0 <= self.news_rate <= 1.0):
            raise ValueError(f"news_rate in [0, 1] violated (got {self.news_rate})")
        if self.shock_factor < 1.0:
            raise ValueError(f"shock_factor >= 1 violated (got {self.shock_factor})")
        # Planted shocks multiply the variance recursion; the process stays
        # stationary only if E[multiplier] * (alpha + beta) < 1.  A cluster
        # continues only on days without a base arrival, so the stationary
        # bad-day fraction solves p = q + c * p * (1 - rate).
        q = self.news_rate * _NEWS_KIND_PROBS[0]
        bad_fraction = (
            q / (1.0 - BAD_CLUSTER_CONTINUATION * (1.0 - self.news_rate))
            if q > 0
            else 0.0
        )
        expected_mult = 1.0 + bad_fraction * (self.shock_factor - 1.0)
        persistence = self.garch.alpha + self.garch.beta
        if expected_mult * persistence >= 0.98:
            raise ValueError(
                "explosive configuration: expected shock multiplier "
                f"{expected_mult:.3f} x persistence {persistence:.3f} >= 0.98; "
                "lower news_rate, shock_factor, or alpha+beta"
            )


SYNTH_TICKER = "SYN"
_SYNTH_START = date(2015, 1, 2)
_BASE_PRICE = 100.0

_NEWS_KINDS = ("bad", "good", "neutral")
_NEWS_KIND_PROBS = (0.5, 0.25, 0.25)
#: Bad news arrives in clusters: a bad-news day is followed by another bad
#: item with this probability, on top of the base arrival rate.
BAD_CLUSTER_CONTINUATION = 0.85
_HEADLINES = {
    "bad": "{t} losses widen as fraud probe deepens",
    "good": "{t} profits soar on record growth",
    "neutral": "{t} schedules annual shareholder meeting",
}
_EVENT_TEXTS = (
    "Management reviewed quarterly results and discussed the demand outlook.",
    "The call covered margins, cash flow and guidance for the coming quarter.",
    "Analysts asked about cost discipline and the pace of expansion.",
    "Prepared remarks summarized segment performance and capital allocation.",
)
_EVENT_SPACING = 63
_EVENT_FIRST = 70


def trading_days(start: date, count: int) -> tuple[date, ...]:
    """``count`` consecutive weekdays from ``start`` (weekends skipped)."""
    out = []
    d = start
    while len(out) < count:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return tuple(out)


def synth_generate(config: SynthConfig, dims: EmbeddingDims | None = None) -> MarketData:
    """Generate a synthetic dataset with planted effects.

    Returns follow r_t = sigma_t * eps_t with the GARCH(1,1) variance
    recursion.  A "bad" news item on day t multiplies sigma2_{t+1} by the
    shock factor; a regime shift multiplies omega from its start day.  The
    return, news and event streams draw from independent child generators
    of the seed, so disabling news leaves the return path bit-identical.
    """
    dims = dims if dims is not None else EmbeddingDims()
    g = config.garch
    n = config.n_days
    seq = np.random.SeedSequence(config.seed)
    rng_ret, rng_news, rng_event = (np.random.default_rng(s) for s in seq.spawn(3))

    eps = rng_ret.standard_normal(n)
    base_occurs = rng_news.random(n) < config.news_rate
    kinds = rng_news.choice(len(_NEWS_KINDS), size=n, p=_NEWS_KIND_PROBS)
    continuation = rng_news.random(n) < BAD_CLUSTER_CONTINUATION
    noise = rng_news.normal(scale=0.1, size=(n, dims.news))
    occurs = np.zeros(n, dtype=bool)
    for t in range(n):
        if base_occurs[t]:
            occurs[t] = True
        elif t > 0 and occurs[t - 1] and _NEWS_KINDS[kinds[t - 1]] == "bad" and continuation[t]:
            occurs[t] = True
            kinds[t] = 0  # cluster continuation stays bad

    def omega_at(t: int) -> float:
        if config.regime_shift is not None and t >= config.regime_shift.day:
            return g.omega * config.regime_shift.vol_multiplier
        return g.omega

    sigma2 = np.empty(n)
    r = np.empty(n)
    persistence = 1.0 - g.alpha - g.beta
    for t in range(n):
        if t == 0:
            sigma2[t] = omega_at(0) / persistence
        else:
            sigma2[t] = omega_at(t) + g.alpha * r[t - 1] ** 2 + g.beta * sigma2[t - 1]
            if occurs[t - 1] and _NEWS_KINDS[kinds[t - 1]] == "bad":
                sigma2[t] *= config.shock_factor
        r[t] = math.sqrt(sigma2[t]) * eps[t]

    dates = trading_days(_SYNTH_START, n + 1)
    closes = _BASE_PRICE * np.exp(np.concatenate(([0.0], np.cumsum(r))))
    prices = PriceSeries(ticker=SYNTH_TICKER, dates=dates, closes=closes)

    centers = np.zeros((len(_NEWS_KINDS), dims.news))
    for k in range(len(_NEWS_KINDS)):
        centers[k, k % dims.news] = 1.0

    news: list[NewsItem] = []
    vol_path = np.sqrt(sigma2)
    for t in range(n):
        if not occurs[t]:
            continue
        kind = _NEWS_KINDS[kinds[t]]
        outcome = None
        if t + 1 < n:
            # vol reaction is measured against the recent norm, not just the
            # prior day, so persistent episodes keep an elevated reading
            baseline = float(np.median(vol_path[max(0, t - 59) : t + 1]))
            outcome = NewsOutcome(
                next_day_return=float(r[t + 1]),
                vol_change=float(vol_path[t + 1] / baseline),
            )
        news.append(
            NewsItem(
                timestamp=datetime.combine(dates[t + 1], _NEWS_TIME),
                ticker=SYNTH_TICKER,
                headline=_HEADLINES[kind].format(t=SYNTH_TICKER),
                embedding=centers[kinds[t]] + noise[t],
                outcome=outcome,
            )
        )

    events: list[EarningsEvent] = []
    for t in range(_EVENT_FIRST, n - max(HORIZONS) - 1, _EVENT_SPACING):
        n_seg = int(rng_event.integers(2, 5))
        segments = tuple(
            Segment(
                text=_EVENT_TEXTS[int(rng_event.integers(0, len(_EVENT_TEXTS)))],
                text_embedding=rng_event.normal(scale=0.5, size=dims.text),
                audio_features=rng_event.normal(scale=0.5, size=dims.audio),
            )
            for _ in range(n_seg)
        )
        events.append(
            EarningsEvent(
                ticker=SYNTH_TICKER, event_date=dates[t + 1], segments=segments
            )
        )
    return MarketData(prices=prices, news=tuple(news), events=tuple(events))


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def write_dataset(data: MarketData, out_dir: str | Path) -> dict[str, Path]:
    """Write prices.csv, news.jsonl and events.jsonl; bit-stable output."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "prices": out / "prices.csv",
        "news": out / "news.jsonl",
        "events": out / "events.jsonl",
    }
    with paths["prices"].open("w", newline="") as fh:
        fh.write("date,ticker,close\n")
        for d, c in zip(data.prices.dates, data.prices.closes):
            fh.write(f"{d.isoformat()},{data.prices.ticker},{float(c)!r}\n")
    with paths["news"].open("w") as fh:
        for item in data.news:
            fh.write(json.dumps(item.to_dict(), sort_keys=True) + "\n")
    with paths["events"].open("w") as fh:
        for event in data.events:
            fh.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
    return paths


def load_market(
    prices_path: str | Path,
    news_path: str | Path | None = None,
    events_path: str | Path | None = None,
    ticker: str | None = None,
    dims: EmbeddingDims | None = None,
) -> MarketData:
    """Load one ticker's dataset from the standard file formats."""
    series = load_prices(prices_path)
    if ticker is None:
        if len(series) != 1:
            raise ValueError(
                f"prices file has tickers {sorted(series)}; pass ticker explicitly"
            )
        ticker = next(iter(series))
    if ticker not in series:
        raise ValueError(f"ticker {ticker!r} not in prices file (has {sorted(series)})")
    news = load_news(news_path, dims) if news_path else []
    events = load_events(events_path, dims) if events_path else []
    return MarketData(
        prices=series[ticker],
        news=tuple(n for n in news if n.ticker == ticker),
        events=tuple(e for e in events if e.ticker == ticker),
    )
