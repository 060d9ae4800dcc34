"""Text-analysis client: remote HTTP service or deterministic offline stub.

Both modes share one output schema, so the rest of the system cannot tell
them apart.  The stub scores text against bundled word lists and never
needs the network; the remote client POSTs ``{"text": ...}`` and expects
``{"summary": ..., "sentiment": -1..1, "risk_terms": int}`` back.

Configuration: env vars ``ANALYZER_URL`` and ``ANALYZER_TOKEN``; CLI flag
``--analyzer stub|remote``.
"""

from __future__ import annotations

import math
import os
import re
import time
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Optional

import httpx
import numpy as np

from .core import EmbeddingDims, _freeze

_TOKEN_RE = re.compile(r"[a-z']+")

ANALYZER_URL_ENV = "ANALYZER_URL"
ANALYZER_TOKEN_ENV = "ANALYZER_TOKEN"

GOOD_THRESHOLD = 0.1
BAD_THRESHOLD = -0.1


@dataclass(frozen=True, eq=False)
class AnalyzerOutput:
    """Analyzer results plus the fixed-width feature vector fed to fusion.

    ``feature_vector`` has dim D_s = 4:
    [sentiment, tanh(risk_term_count/10), tanh(words/500), tanh(chars/2500)].
    """

    summary: str
    sentiment: float
    risk_term_count: int
    feature_vector: np.ndarray

    def __post_init__(self) -> None:
        _freeze(self, "feature_vector", self.feature_vector)


@dataclass(frozen=True)
class HeadlineLabel:
    """Good/bad/irrelevant call on a headline, with the underlying score."""

    label: str
    score: float


def _load_lexicon(name: str) -> frozenset[str]:
    text = resources.files("risklabs.lexicons").joinpath(f"{name}.txt").read_text()
    return frozenset(
        line.strip().lower()
        for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    )


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def _count_hits(tokens: list[str], lexicon: frozenset[str]) -> int:
    hits = 0
    for tok in tokens:
        if tok in lexicon or (tok.endswith("s") and tok[:-1] in lexicon):
            hits += 1
    return hits


def _feature_vector(sentiment: float, risk_terms: int, text: str) -> np.ndarray:
    words = len(text.split())
    return np.array(
        [
            sentiment,
            math.tanh(risk_terms / 10.0),
            math.tanh(words / 500.0),
            math.tanh(len(text) / 2500.0),
        ]
    )


def _clamp_sentiment(x: float) -> float:
    return min(1.0, max(-1.0, x))


class StubAnalyzer:
    """Offline analyzer: pure function of the text and the bundled lexicons.

    Sentiment is (pos - neg) / (pos + neg + 1) over lexicon hits;
    risk_term_count counts matches against the risk lexicon.
    """

    mode = "stub"

    def __init__(self) -> None:
        self._positive = _load_lexicon("positive")
        self._negative = _load_lexicon("negative")
        self._risk = _load_lexicon("risk")

    def _score(self, text: str) -> tuple[float, int]:
        toks = _tokens(text)
        pos = _count_hits(toks, self._positive)
        neg = _count_hits(toks, self._negative)
        sentiment = (pos - neg) / (pos + neg + 1)
        return _clamp_sentiment(sentiment), _count_hits(toks, self._risk)

    def analyze_transcript(self, text: str) -> AnalyzerOutput:
        if not text.strip():
            raise ValueError("transcript text is empty")
        sentiment, risk_terms = self._score(text)
        summary = text.strip().splitlines()[0][:200]
        return AnalyzerOutput(
            summary=summary,
            sentiment=sentiment,
            risk_term_count=risk_terms,
            feature_vector=_feature_vector(sentiment, risk_terms, text),
        )

    def classify_headline(self, headline: str) -> HeadlineLabel:
        if not headline.strip():
            raise ValueError("headline is empty")
        score, _ = self._score(headline)
        if score > GOOD_THRESHOLD:
            label = "good"
        elif score < BAD_THRESHOLD:
            label = "bad"
        else:
            label = "irrelevant"
        return HeadlineLabel(label=label, score=score)


class RemoteAnalyzerError(RuntimeError):
    """Remote analyzer failed after retries or returned a malformed response."""


class RemoteAnalyzer:
    """HTTP client for an external analysis service.

    Timeouts and 5xx responses are retried twice with jittered exponential
    backoff; the jitter source and sleep function are injectable so tests
    can run the schedule deterministically.
    """

    mode = "remote"
    max_retries = 2

    def __init__(
        self,
        url: Optional[str] = None,
        token: Optional[str] = None,
        transport: Optional[httpx.BaseTransport] = None,
        timeout: float = 10.0,
        backoff_base: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
        jitter: Optional[Callable[[], float]] = None,
    ) -> None:
        self.url = url or os.environ.get(ANALYZER_URL_ENV, "")
        if not self.url:
            raise ValueError(f"no analyzer URL (set {ANALYZER_URL_ENV} or pass url=)")
        self.token = token if token is not None else os.environ.get(ANALYZER_TOKEN_ENV, "")
        self._client = httpx.Client(transport=transport, timeout=timeout)
        self._backoff_base = backoff_base
        self._sleep = sleep
        self._jitter = jitter if jitter is not None else np.random.default_rng().random

    def _post(self, text: str) -> dict:
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self._backoff_base * 2 ** (attempt - 1) * (1.0 + self._jitter()))
            try:
                resp = self._client.post(self.url, json={"text": text}, headers=headers)
            except httpx.TimeoutException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = RemoteAnalyzerError(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise RemoteAnalyzerError(f"unexpected status {resp.status_code}")
            try:
                body = resp.json()
                return {
                    "summary": str(body["summary"]),
                    "sentiment": float(body["sentiment"]),
                    "risk_terms": int(body["risk_terms"]),
                }
            except (KeyError, TypeError, ValueError) as exc:
                raise RemoteAnalyzerError(f"malformed response: {exc}") from exc
        raise RemoteAnalyzerError(f"gave up after {self.max_retries} retries: {last_error}")

    def analyze_transcript(self, text: str) -> AnalyzerOutput:
        if not text.strip():
            raise ValueError("transcript text is empty")
        body = self._post(text)
        sentiment = _clamp_sentiment(body["sentiment"])
        return AnalyzerOutput(
            summary=body["summary"],
            sentiment=sentiment,
            risk_term_count=max(0, body["risk_terms"]),
            feature_vector=_feature_vector(sentiment, max(0, body["risk_terms"]), text),
        )

    def classify_headline(self, headline: str) -> HeadlineLabel:
        if not headline.strip():
            raise ValueError("headline is empty")
        body = self._post(headline)
        score = _clamp_sentiment(body["sentiment"])
        if score > GOOD_THRESHOLD:
            label = "good"
        elif score < BAD_THRESHOLD:
            label = "bad"
        else:
            label = "irrelevant"
        return HeadlineLabel(label=label, score=score)


def make_analyzer(mode: str = "stub", **kwargs):
    """Factory for ``--analyzer stub|remote``."""
    if mode == "stub":
        return StubAnalyzer()
    if mode == "remote":
        return RemoteAnalyzer(**kwargs)
    raise ValueError(f"unknown analyzer mode {mode!r}")


def analyzer_dim() -> int:
    return EmbeddingDims().analyzer
