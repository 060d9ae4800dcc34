"""Input encoders: earnings calls, news-market reaction, and time series.

The earnings encoder pools variable-length call segments with multi-head
attention (separately for audio features and text embeddings), merges them
with the transcript-analyzer feature vector through additive fusion, and is
fully differentiable.  The news encoder retrieves similar past headlines by
exact cosine k-NN, weights them by similarity times an exponential
freshness decay, and averages their realized outcomes.  The time-series
encoder runs the recurrent cell over the 30-day lookback and appends
summary statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, datetime
from typing import Sequence

import numpy as np

from .core import LOOKBACK_DAYS, EarningsEvent, NewsItem
from .data import VOL_FLOOR
from .nn import AttentionPool, LSTMCell, Params, init_uniform


@dataclass(frozen=True)
class ReactionConfig:
    """k-NN retrieval settings for the news-reaction encoder."""

    k: int = 5
    gamma_fresh: float = math.log(2.0) / 7.0  # one-week half-life
    min_similarity: float = 0.2

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k >= 1 violated (got {self.k})")
        if self.gamma_fresh < 0:
            raise ValueError(f"gamma_fresh >= 0 violated (got {self.gamma_fresh})")
        if not (-1.0 <= self.min_similarity <= 1.0):
            raise ValueError(
                f"min_similarity in [-1, 1] violated (got {self.min_similarity})"
            )


@dataclass(frozen=True)
class ReactionFeature:
    """Expected market reaction inferred from similar past news."""

    expected_next_return: float
    expected_vol_change: float
    support_count: int

    def as_vector(self) -> np.ndarray:
        return np.array(
            [self.expected_next_return, self.expected_vol_change, float(self.support_count)]
        )


class NewsMemory:
    """Outcome-bearing news items held as arrays for fast retrieval.

    Items are canonicalized into timestamp order at construction, so
    retrieval results do not depend on input ordering.
    """

    def __init__(self, items: Sequence[NewsItem]):
        kept = sorted(
            (n for n in items if n.outcome is not None),
            key=lambda n: (
                n.timestamp,
                n.outcome.next_day_return,
                n.outcome.vol_change,
            ),
        )
        self.items: tuple[NewsItem, ...] = tuple(kept)
        if kept:
            self.embeddings = np.stack([n.embedding for n in kept])
            self.outcomes = np.array(
                [(n.outcome.next_day_return, n.outcome.vol_change) for n in kept]
            )
        else:
            self.embeddings = np.zeros((0, 0))
            self.outcomes = np.zeros((0, 2))
        self.timestamps: tuple[datetime, ...] = tuple(n.timestamp for n in kept)

    def __len__(self) -> int:
        return len(self.items)

    def before_date(self, as_of: date) -> "NewsMemory":
        """Items dated strictly before ``as_of``.

        Restricting by date guarantees every retained outcome was realized
        by ``as_of`` (an item's outcome covers the next trading day).
        """
        view = NewsMemory.__new__(NewsMemory)
        n = 0
        while n < len(self.items) and self.items[n].timestamp.date() < as_of:
            n += 1
        view.items = self.items[:n]
        view.embeddings = self.embeddings[:n] if n else np.zeros((0, 0))
        view.outcomes = self.outcomes[:n]
        view.timestamps = self.timestamps[:n]
        return view


def news_freshness(t_news: datetime, t_now: datetime, gamma: float) -> float:
    """Exponential age decay exp(-gamma * age_in_days), in (0, 1]."""
    if t_news > t_now:
        raise ValueError(f"look-ahead: news at {t_news} is after {t_now}")
    age_days = (t_now - t_news).total_seconds() / 86400.0
    return math.exp(-gamma * age_days)


def news_similarity(e1: np.ndarray, e2: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; zero vectors are rejected."""
    a = np.asarray(e1, dtype=np.float64)
    b = np.asarray(e2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"embedding dims differ: {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def news_reaction(
    query: NewsItem, memory: NewsMemory, cfg: ReactionConfig
) -> ReactionFeature:
    """Expected reaction from the top-k most similar, strictly earlier items.

    Items at or after the query time are ignored (look-ahead guard).  Among
    items with similarity >= the threshold, the k most similar contribute
    outcomes weighted by similarity times freshness.  No match is a defined
    state: zeros with support 0.
    """
    n_eligible = 0
    while (
        n_eligible < len(memory)
        and memory.timestamps[n_eligible] < query.timestamp
    ):
        n_eligible += 1
    if n_eligible == 0:
        return ReactionFeature(0.0, 0.0, 0)
    emb = memory.embeddings[:n_eligible]
    qn = float(np.linalg.norm(query.embedding))
    norms = np.linalg.norm(emb, axis=1)
    if qn == 0.0 or np.any(norms == 0.0):
        raise ValueError("cosine undefined for zero vector")
    sims = np.clip(emb @ query.embedding / (norms * qn), -1.0, 1.0)
    passing = np.flatnonzero(sims >= cfg.min_similarity)
    if passing.size == 0:
        return ReactionFeature(0.0, 0.0, 0)
    # memory order is canonical, so (-sim, position) ranks deterministically
    order = passing[np.lexsort((passing, -sims[passing]))]
    chosen = order[: cfg.k]
    fresh = np.array(
        [news_freshness(memory.timestamps[i], query.timestamp, cfg.gamma_fresh) for i in chosen]
    )
    weights = sims[chosen] * fresh
    total = float(weights.sum())
    if abs(total) < 1e-12:
        return ReactionFeature(0.0, 0.0, 0)
    agg = weights @ memory.outcomes[chosen] / total
    return ReactionFeature(
        expected_next_return=float(agg[0]),
        expected_vol_change=float(agg[1]),
        support_count=int(chosen.size),
    )


class FusionWeights:
    """Additive multimodal fusion: W_a a + W_t t + W_s s + bias."""

    def __init__(
        self,
        fused_dim: int,
        audio_dim: int,
        text_dim: int,
        summary_dim: int,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.fused_dim = fused_dim
        self.params: Params = {
            "W_audio": init_uniform(rng, (fused_dim, audio_dim), audio_dim, fused_dim),
            "W_text": init_uniform(rng, (fused_dim, text_dim), text_dim, fused_dim),
            "W_summary": init_uniform(rng, (fused_dim, summary_dim), summary_dim, fused_dim),
            "bias": np.zeros(fused_dim),
        }
        self.grads: Params = {k: np.zeros_like(v) for k, v in self.params.items()}

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[:] = 0.0

    def forward(
        self, audio: np.ndarray, text: np.ndarray, summary: np.ndarray
    ) -> tuple[np.ndarray, dict]:
        for name, vec, mat in (
            ("audio", audio, self.params["W_audio"]),
            ("text", text, self.params["W_text"]),
            ("summary", summary, self.params["W_summary"]),
        ):
            if vec.shape != (mat.shape[1],):
                raise ValueError(
                    f"fusion {name} input: got shape {vec.shape}, expected ({mat.shape[1]},)"
                )
        out = (
            self.params["W_audio"] @ audio
            + self.params["W_text"] @ text
            + self.params["W_summary"] @ summary
            + self.params["bias"]
        )
        return out, {"audio": audio, "text": text, "summary": summary}

    def backward(self, dout: np.ndarray, cache: dict) -> tuple[np.ndarray, np.ndarray]:
        """Accumulate fusion gradients; returns (d_audio, d_text)."""
        self.grads["W_audio"] += np.outer(dout, cache["audio"])
        self.grads["W_text"] += np.outer(dout, cache["text"])
        self.grads["W_summary"] += np.outer(dout, cache["summary"])
        self.grads["bias"] += dout
        return self.params["W_audio"].T @ dout, self.params["W_text"].T @ dout


def encode_earnings(
    event: EarningsEvent,
    att_audio: AttentionPool,
    att_text: AttentionPool,
    analyzer_out,
    fusion: FusionWeights,
) -> tuple[np.ndarray, dict]:
    """Fused earnings-call vector from pooled audio, pooled text and analysis."""
    audio = np.stack([s.audio_features for s in event.segments])
    text = np.stack([s.text_embedding for s in event.segments])
    a, cache_a = att_audio.forward(audio)
    t, cache_t = att_text.forward(text)
    s = np.asarray(analyzer_out.feature_vector, dtype=np.float64)
    fused, cache_f = fusion.forward(a, t, s)
    return fused, {"audio": cache_a, "text": cache_t, "fusion": cache_f}


def encode_earnings_backward(
    dout: np.ndarray,
    cache: dict,
    att_audio: AttentionPool,
    att_text: AttentionPool,
    fusion: FusionWeights,
) -> None:
    da, dt = fusion.backward(dout, cache["fusion"])
    att_audio.backward(da, cache["audio"])
    att_text.backward(dt, cache["text"])


# ---------------------------------------------------------------------------
# Time series encoder
# ---------------------------------------------------------------------------

TS_EXTRA_STATS = 3  # realized log vol, ewma vol, last return


def timeseries_stats(lookbacks: np.ndarray) -> np.ndarray:
    """Per-row summary stats [realized_log_vol, ewma_vol, last return].

    The EWMA stat is the volatility (square root of the lambda = 0.94
    variance recursion), keeping its scale commensurate with the other
    features; a degenerate window yields 0.
    """
    lb = np.atleast_2d(np.asarray(lookbacks, dtype=np.float64))
    std = np.std(lb, axis=1, ddof=1)
    log_vol = np.log(np.maximum(std, VOL_FLOOR))
    lam = 0.94
    v = lb[:, 0] ** 2
    for t in range(lb.shape[1]):
        v = lam * v + (1.0 - lam) * lb[:, t] ** 2
    return np.column_stack([log_vol, np.sqrt(v), lb[:, -1]])


def encode_timeseries(
    cell: LSTMCell, lookbacks: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Encode 30-return lookbacks: final hidden state ++ summary stats.

    Accepts a single window (30,) or a batch (B, 30); output dim is always
    hidden + 3.
    """
    lb = np.atleast_2d(np.asarray(lookbacks, dtype=np.float64))
    if lb.shape[1] != LOOKBACK_DAYS:
        raise ValueError(
            f"lookback length: got {lb.shape[1]}, expected {LOOKBACK_DAYS}"
        )
    h, cache = cell.forward(lb[:, :, None])
    return np.concatenate([h, timeseries_stats(lb)], axis=1), cache


def encode_timeseries_backward(
    cell: LSTMCell, denc: np.ndarray, cache: dict
) -> None:
    """Route gradient into the recurrent cell (stats carry no parameters)."""
    denc = np.atleast_2d(denc)
    cell.backward(denc[:, : cell.hidden], cache)
