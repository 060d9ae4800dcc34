"""Stub lexicon scoring, remote client protocol, and mode substitutability."""

import json

import httpx
import numpy as np
import pytest

from risklabs.analyzer import (
    AnalyzerOutput,
    RemoteAnalyzer,
    RemoteAnalyzerError,
    StubAnalyzer,
    make_analyzer,
)


@pytest.fixture(scope="module")
def stub():
    return StubAnalyzer()


class TestStubTranscripts:
    def test_three_positive_no_negative(self, stub):
        out = stub.analyze_transcript("profit growth was a record")
        assert out.sentiment == pytest.approx(0.75)  # (3 - 0) / (3 + 0 + 1)

    def test_no_hits_is_neutral(self, stub):
        out = stub.analyze_transcript("the quick brown fox jumped over")
        assert out.sentiment == 0.0
        assert out.risk_term_count == 0

    def test_deterministic(self, stub):
        text = "growth offset by litigation risk and weak demand"
        a = stub.analyze_transcript(text)
        b = stub.analyze_transcript(text)
        assert a.sentiment == b.sentiment
        assert a.risk_term_count == b.risk_term_count
        assert np.array_equal(a.feature_vector, b.feature_vector)

    def test_risk_terms_counted(self, stub):
        out = stub.analyze_transcript("litigation risk and more risk exposure")
        assert out.risk_term_count == 4

    def test_plural_fallback(self, stub):
        out = stub.analyze_transcript("profits and gains")
        assert out.sentiment == pytest.approx(2 / 3)

    def test_feature_vector_dims_and_bounds(self, stub):
        out = stub.analyze_transcript("growth " * 50 + "loss " * 10)
        assert out.feature_vector.shape == (4,)
        assert -1 <= out.feature_vector[0] <= 1
        assert all(0 <= x < 1 for x in out.feature_vector[1:])

    def test_empty_text_rejected(self, stub):
        with pytest.raises(ValueError):
            stub.analyze_transcript("   ")

    def test_sentiment_always_clamped(self, stub):
        out = stub.analyze_transcript("loss " * 400)
        assert -1.0 <= out.sentiment <= 1.0


class TestStubHeadlines:
    @pytest.mark.parametrize(
        "headline,label",
        [
            ("profits soar, record growth", "good"),
            ("company schedules annual meeting", "irrelevant"),
            ("fraud probe, losses widen", "bad"),
        ],
    )
    def test_labels(self, stub, headline, label):
        assert stub.classify_headline(headline).label == label

    def test_irrelevant_implies_small_score(self, stub):
        for headline in (
            "company schedules annual meeting",
            "board met on tuesday",
            "growth offset by losses",
        ):
            result = stub.classify_headline(headline)
            if result.label == "irrelevant":
                assert abs(result.score) < 0.1


def make_remote(handler, **kwargs):
    transport = httpx.MockTransport(handler)
    return RemoteAnalyzer(
        url="http://analyzer.test/v1",
        token="secret",
        transport=transport,
        sleep=lambda s: None,
        jitter=lambda: 0.0,
        **kwargs,
    )


class TestRemote:
    def test_posts_text_and_parses_response(self, stub):
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("authorization")
            seen["body"] = json.loads(request.content)
            return httpx.Response(
                200, json={"summary": "s", "sentiment": 0.4, "risk_terms": 2}
            )

        remote = make_remote(handler)
        out = remote.analyze_transcript("growth ahead")
        assert seen["body"] == {"text": "growth ahead"}
        assert seen["auth"] == "Bearer secret"
        assert out.sentiment == 0.4
        assert out.risk_term_count == 2

    def test_retries_on_5xx_then_succeeds(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            if calls["n"] < 3:
                return httpx.Response(502)
            return httpx.Response(
                200, json={"summary": "s", "sentiment": -0.2, "risk_terms": 0}
            )

        remote = make_remote(handler)
        out = remote.analyze_transcript("text")
        assert calls["n"] == 3
        assert out.sentiment == -0.2

    def test_gives_up_after_two_retries(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(503)

        remote = make_remote(handler)
        with pytest.raises(RemoteAnalyzerError, match="gave up"):
            remote.analyze_transcript("text")
        assert calls["n"] == 3  # initial + 2 retries

    def test_malformed_response_is_error(self):
        def handler(request):
            return httpx.Response(200, json={"nope": 1})

        remote = make_remote(handler)
        with pytest.raises(RemoteAnalyzerError, match="malformed"):
            remote.analyze_transcript("text")

    def test_sentiment_clamped(self):
        def handler(request):
            return httpx.Response(
                200, json={"summary": "s", "sentiment": 7.0, "risk_terms": 1}
            )

        out = make_remote(handler).analyze_transcript("text")
        assert out.sentiment == 1.0

    def test_headline_classification_shares_thresholds(self):
        def handler(request):
            return httpx.Response(
                200, json={"summary": "s", "sentiment": -0.5, "risk_terms": 0}
            )

        assert make_remote(handler).classify_headline("anything").label == "bad"

    def test_requires_url(self, monkeypatch):
        monkeypatch.delenv("ANALYZER_URL", raising=False)
        with pytest.raises(ValueError, match="ANALYZER_URL"):
            RemoteAnalyzer()


class TestSubstitutability:
    """Remote and stub share one schema; downstream code cannot tell."""

    def test_same_pipeline_both_modes(self, stub):
        text = "record growth tempered by litigation risk"
        reference = stub.analyze_transcript(text)

        def handler(request):
            body = json.loads(request.content)
            local = stub.analyze_transcript(body["text"])
            return httpx.Response(
                200,
                json={
                    "summary": local.summary,
                    "sentiment": local.sentiment,
                    "risk_terms": local.risk_term_count,
                },
            )

        remote = make_remote(handler)
        mirrored = remote.analyze_transcript(text)
        assert isinstance(mirrored, AnalyzerOutput)
        assert mirrored.sentiment == reference.sentiment
        assert mirrored.risk_term_count == reference.risk_term_count
        assert np.array_equal(mirrored.feature_vector, reference.feature_vector)

    def test_factory_modes(self):
        assert make_analyzer("stub").mode == "stub"
        with pytest.raises(ValueError):
            make_analyzer("other")

    def test_full_prediction_pipeline_indistinguishable(self, stub):
        """A model predicting under the stub and under a remote mirror of the
        stub produces the same forecast bits."""
        from risklabs.classical import GarchParams
        from risklabs.data import SynthConfig, build_samples, synth_generate
        from risklabs.encoders import NewsMemory
        from risklabs.model import ModelConfig, RiskLabsModel

        def handler(request):
            body = json.loads(request.content)
            local = stub.analyze_transcript(body["text"])
            return httpx.Response(
                200,
                json={
                    "summary": local.summary,
                    "sentiment": local.sentiment,
                    "risk_terms": local.risk_term_count,
                },
            )

        data = synth_generate(
            SynthConfig(
                n_days=160,
                garch=GarchParams(omega=0.25, alpha=0.05, beta=0.70),
                news_rate=0.3, shock_factor=1.4, seed=12,
            )
        )
        samples, _ = build_samples(data.prices, data.news, data.events, anchor="daily")
        with_event = next(s for s in samples if s.earnings is not None)
        memory = NewsMemory(data.news)
        config = ModelConfig(hidden=4, head_hidden=5, fused_dim=3)
        via_stub = RiskLabsModel(config, seed=4, analyzer=stub).predict(
            with_event, memory
        )
        via_remote = RiskLabsModel(
            config, seed=4, analyzer=make_remote(handler)
        ).predict(with_event, memory)
        assert via_stub.vol == via_remote.vol
        assert via_stub.var_1d == via_remote.var_1d
