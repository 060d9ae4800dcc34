"""Multi-task risk model: encoder assembly, training, prediction.

The model concatenates [time-series encoding | fused earnings vector |
news-reaction feature | presence flags] into one input vector, runs a small
dense head with five outputs (four horizon log-vols plus one VaR quantile),
and trains by full-batch gradient descent on a weighted multi-task loss:
squared error per volatility horizon plus pinball loss on the VaR head
against the raw next-day return.  Absent sources contribute zero blocks
with their presence flag cleared.

Sample weighting decays exponentially with age; a regime-shift probe on
recent-versus-prior volatility selects how much training history to keep.
Training is single-threaded and bit-deterministic under a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .analyzer import AnalyzerOutput, StubAnalyzer
from .core import (
    HORIZONS,
    EmbeddingDims,
    NumericError,
    ReturnSeries,
    RiskForecast,
    SampleLabels,
    TrainingSample,
)
from .encoders import (
    FusionWeights,
    NewsMemory,
    ReactionConfig,
    encode_earnings,
    encode_earnings_backward,
    encode_timeseries,
    encode_timeseries_backward,
    news_reaction,
)
from .nn import (
    AdamState,
    AttentionPool,
    Dense,
    LSTMCell,
    Params,
    adam_step,
    params_from_doc,
    params_to_doc,
)

MODEL_SCHEMA_VERSION = 1

_REACTION_DIM = 3
_FLAG_DIM = 3


@dataclass(frozen=True)
class MultiTaskWeights:
    """Loss weights per volatility horizon plus the VaR term."""

    vol: Mapping[int, float] = field(
        default_factory=lambda: {h: 1.0 for h in HORIZONS}
    )
    var: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "vol", dict(self.vol))
        if tuple(sorted(self.vol)) != HORIZONS:
            raise ValueError(f"vol weights must cover horizons {HORIZONS}")
        values = list(self.vol.values()) + [self.var]
        if any(v < 0 or not np.isfinite(v) for v in values):
            raise ValueError(f"loss weights >= 0 violated (got {values})")
        if sum(values) == 0:
            raise ValueError("loss weights must not all be zero")

    def vol_vector(self) -> np.ndarray:
        return np.array([self.vol[h] for h in HORIZONS])


@dataclass(frozen=True)
class DecayConfig:
    """Exponential age decay rate for training-sample weights (1/day)."""

    gamma_sample: float = math.log(2.0) / 90.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.gamma_sample) or self.gamma_sample < 0:
            raise ValueError(f"gamma_sample >= 0 violated (got {self.gamma_sample})")


@dataclass(frozen=True)
class WindowConfig:
    """Dynamic training-window bounds and the regime-shift probe threshold.

    The probe is (std of the last 30 returns) / (std of the prior 90); a
    ratio above the threshold shrinks the window to ``w_min`` days,
    otherwise the window grows by 30 days up to ``w_max``.
    """

    w_min: int = 120
    w_max: int = 1000
    shift_ratio_threshold: float = 2.0

    def __post_init__(self) -> None:
        if self.w_min > self.w_max:
            raise ValueError(f"w_min <= w_max violated ({self.w_min} > {self.w_max})")
        if self.shift_ratio_threshold <= 1.0:
            raise ValueError(
                f"threshold > 1 violated (got {self.shift_ratio_threshold})"
            )


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters; defaults are desk-scale, all config-exposed."""

    dims: EmbeddingDims = field(default_factory=EmbeddingDims)
    hidden: int = 16
    heads: int = 2
    fused_dim: int = 8
    head_hidden: int = 16
    var_alpha: float = 0.05
    lambdas: MultiTaskWeights = field(default_factory=MultiTaskWeights)
    decay: DecayConfig = field(default_factory=DecayConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    reaction: ReactionConfig = field(default_factory=ReactionConfig)
    train_epochs: int = 500
    train_lr: float = 0.01
    train_lr_final: Optional[float] = None  # linear decay target; None = constant
    train_l2: float = 0.0  # L2 penalty on weight matrices (not biases)
    #: extra epochs refitting only the VaR output row against the frozen
    #: trunk; settles the quantile head, which otherwise keeps chasing the
    #: shared hidden layer as the squared-error heads reshape it
    var_calibration_epochs: int = 400

    def to_dict(self) -> dict:
        return {
            "dims": {
                "text": self.dims.text,
                "audio": self.dims.audio,
                "news": self.dims.news,
                "analyzer": self.dims.analyzer,
            },
            "hidden": self.hidden,
            "heads": self.heads,
            "fused_dim": self.fused_dim,
            "head_hidden": self.head_hidden,
            "var_alpha": self.var_alpha,
            "lambdas": {
                "vol": {str(h): v for h, v in self.lambdas.vol.items()},
                "var": self.lambdas.var,
            },
            "decay": {"gamma_sample": self.decay.gamma_sample},
            "window": {
                "w_min": self.window.w_min,
                "w_max": self.window.w_max,
                "shift_ratio_threshold": self.window.shift_ratio_threshold,
            },
            "reaction": {
                "k": self.reaction.k,
                "gamma_fresh": self.reaction.gamma_fresh,
                "min_similarity": self.reaction.min_similarity,
            },
            "train_epochs": self.train_epochs,
            "train_lr": self.train_lr,
            "train_lr_final": self.train_lr_final,
            "train_l2": self.train_l2,
            "var_calibration_epochs": self.var_calibration_epochs,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(
            dims=EmbeddingDims(**d["dims"]),
            hidden=d["hidden"],
            heads=d["heads"],
            fused_dim=d["fused_dim"],
            head_hidden=d["head_hidden"],
            var_alpha=d["var_alpha"],
            lambdas=MultiTaskWeights(
                vol={int(h): v for h, v in d["lambdas"]["vol"].items()},
                var=d["lambdas"]["var"],
            ),
            decay=DecayConfig(**d["decay"]),
            window=WindowConfig(**d["window"]),
            reaction=ReactionConfig(**d["reaction"]),
            train_epochs=d["train_epochs"],
            train_lr=d["train_lr"],
            train_lr_final=d.get("train_lr_final"),
            train_l2=d.get("train_l2", 0.0),
            var_calibration_epochs=d.get("var_calibration_epochs", 0),
        )


@dataclass
class PreparedBatch:
    """Static per-sample feature blocks; only parameters vary across epochs."""

    samples: list[TrainingSample]
    lookbacks: np.ndarray
    reaction: np.ndarray
    flags: np.ndarray
    events: list[tuple[int, object, AnalyzerOutput]]
    vol_labels: Optional[np.ndarray]
    next_returns: Optional[np.ndarray]

    def __len__(self) -> int:
        return len(self.samples)


class RiskLabsModel:
    """Encoders plus multi-task head; five outputs (4 log-vols, 1 VaR)."""

    N_OUTPUTS = 5

    def __init__(self, config: ModelConfig | None = None, seed: int = 0,
                 analyzer=None):
        self.config = config if config is not None else ModelConfig()
        self.analyzer = analyzer if analyzer is not None else StubAnalyzer()
        self._analysis_cache: dict[tuple[str, date], AnalyzerOutput] = {}
        self.reinit(seed)

    # -- construction ------------------------------------------------------

    def reinit(self, seed: int) -> None:
        """Rebuild all parameters from the seed (used by train for determinism)."""
        cfg = self.config
        streams = np.random.SeedSequence(seed).spawn(6)
        rngs = [np.random.default_rng(s) for s in streams]
        self.ts_cell = LSTMCell(1, cfg.hidden, rng=rngs[0])
        self.att_audio = AttentionPool(cfg.dims.audio, heads=cfg.heads, rng=rngs[1])
        self.att_text = AttentionPool(cfg.dims.text, heads=cfg.heads, rng=rngs[2])
        self.fusion = FusionWeights(
            cfg.fused_dim, cfg.dims.audio, cfg.dims.text, cfg.dims.analyzer,
            rng=rngs[3],
        )
        self.head_in = Dense(self.feature_dim, cfg.head_hidden, "tanh", rng=rngs[4])
        self.head_out = Dense(cfg.head_hidden, self.N_OUTPUTS, "identity", rng=rngs[5])
        self._components = {
            "ts_cell": self.ts_cell,
            "att_audio": self.att_audio,
            "att_text": self.att_text,
            "fusion": self.fusion,
            "head_in": self.head_in,
            "head_out": self.head_out,
        }

    @property
    def ts_dim(self) -> int:
        return self.config.hidden + 3

    @property
    def feature_dim(self) -> int:
        return self.ts_dim + self.config.fused_dim + _REACTION_DIM + _FLAG_DIM

    def params(self) -> Params:
        out: Params = {}
        for name, comp in self._components.items():
            for k, v in comp.params.items():
                out[f"{name}.{k}"] = v
        return out

    def grads(self) -> Params:
        out: Params = {}
        for name, comp in self._components.items():
            for k, v in comp.grads.items():
                out[f"{name}.{k}"] = v
        return out

    def zero_grads(self) -> None:
        for comp in self._components.values():
            comp.zero_grads()

    # -- feature assembly ---------------------------------------------------

    def _analysis(self, event) -> AnalyzerOutput:
        key = (event.ticker, event.event_date)
        if key not in self._analysis_cache:
            self._analysis_cache[key] = self.analyzer.analyze_transcript(
                event.transcript
            )
        return self._analysis_cache[key]

    def reaction_feature(self, sample: TrainingSample, memory: NewsMemory) -> np.ndarray:
        """Reaction block for one sample; zeros when no usable news.

        The reaction encoder assesses breaking news, so the query is the
        latest headline dated on the as-of day itself; older window items
        already had their market reaction.  The memory is restricted to
        items dated strictly before the as-of date, so every outcome
        consulted was realized by then.
        """
        todays = [n for n in sample.news_window if n.timestamp.date() == sample.as_of]
        if not todays:
            return np.zeros(_REACTION_DIM)
        query = max(todays, key=lambda n: n.timestamp)
        restricted = memory.before_date(sample.as_of)
        return news_reaction(query, restricted, self.config.reaction).as_vector()

    def prepare(
        self, samples: Sequence[TrainingSample], memory: NewsMemory
    ) -> PreparedBatch:
        """Precompute every parameter-independent feature block."""
        samples = list(samples)
        lookbacks = np.stack([s.lookback_returns for s in samples])
        reaction = np.stack([self.reaction_feature(s, memory) for s in samples])
        flags = np.stack([s.presence.as_vector() for s in samples])
        events = []
        for row, s in enumerate(samples):
            if s.earnings is not None:
                events.append((row, s.earnings, self._analysis(s.earnings)))
        have_labels = all(s.labels is not None for s in samples)
        vol_labels = next_returns = None
        if have_labels:
            vol_labels = np.array(
                [[s.labels.vol[h] for h in HORIZONS] for s in samples]
            )
            next_returns = np.array([s.labels.next_day_return for s in samples])
        return PreparedBatch(
            samples=samples,
            lookbacks=lookbacks,
            reaction=reaction,
            flags=flags,
            events=events,
            vol_labels=vol_labels,
            next_returns=next_returns,
        )

    def assemble_features(
        self, sample: TrainingSample, memory: NewsMemory
    ) -> np.ndarray:
        """Input vector [timeseries | fused earnings | reaction | flags]."""
        prepared = self.prepare([sample], memory)
        features, _ = self._features_forward(prepared)
        return features[0]

    def _features_forward(self, prepared: PreparedBatch) -> tuple[np.ndarray, dict]:
        ts_out, lstm_cache = encode_timeseries(self.ts_cell, prepared.lookbacks)
        fused = np.zeros((len(prepared), self.config.fused_dim))
        event_caches = []
        for row, event, analysis in prepared.events:
            vec, cache = encode_earnings(
                event, self.att_audio, self.att_text, analysis, self.fusion
            )
            fused[row] = vec
            event_caches.append((row, cache))
        features = np.concatenate(
            [ts_out, fused, prepared.reaction, prepared.flags], axis=1
        )
        return features, {"lstm": lstm_cache, "events": event_caches}

    def forward(self, prepared: PreparedBatch) -> tuple[np.ndarray, dict]:
        features, enc_cache = self._features_forward(prepared)
        hidden, cache_in = self.head_in.forward(features)
        preds, cache_out = self.head_out.forward(hidden)
        return preds, {
            "enc": enc_cache, "head_in": cache_in, "head_out": cache_out,
        }

    def backward(self, dpreds: np.ndarray, cache: dict) -> None:
        dhidden = self.head_out.backward(dpreds, cache["head_out"])
        dfeatures = self.head_in.backward(dhidden, cache["head_in"])
        encode_timeseries_backward(
            self.ts_cell, dfeatures[:, : self.ts_dim], cache["enc"]["lstm"]
        )
        lo = self.ts_dim
        hi = lo + self.config.fused_dim
        for row, ev_cache in cache["enc"]["events"]:
            encode_earnings_backward(
                dfeatures[row, lo:hi], ev_cache, self.att_audio, self.att_text,
                self.fusion,
            )

    # -- loss ----------------------------------------------------------------

    def batch_loss(
        self,
        preds: np.ndarray,
        prepared: PreparedBatch,
        weights: np.ndarray,
    ) -> tuple[float, np.ndarray, np.ndarray]:
        """Weighted multi-task loss, its gradient, and per-sample losses."""
        if prepared.vol_labels is None:
            raise ValueError("batch has unlabeled samples; cannot compute loss")
        lam = self.config.lambdas.vol_vector()
        lam_q = self.config.lambdas.var
        alpha = self.config.var_alpha
        diff = preds[:, :4] - prepared.vol_labels
        u = prepared.next_returns - preds[:, 4]
        pin = np.maximum(alpha * u, (alpha - 1.0) * u)
        per_sample = diff**2 @ lam + lam_q * pin
        loss = float(weights @ per_sample)
        dpreds = np.empty_like(preds)
        dpreds[:, :4] = weights[:, None] * 2.0 * diff * lam
        g_u = np.where(u > 0.0, alpha, alpha - 1.0)
        dpreds[:, 4] = weights * lam_q * (-g_u)
        return loss, dpreds, per_sample

    def compute_loss(self, prepared: PreparedBatch, weights: np.ndarray) -> float:
        preds, _ = self.forward(prepared)
        loss, _, _ = self.batch_loss(preds, prepared, weights)
        return loss

    def compute_gradients(
        self, prepared: PreparedBatch, weights: np.ndarray
    ) -> tuple[float, Params]:
        """One full forward/backward pass; returns (loss, namespaced grads)."""
        self.zero_grads()
        preds, cache = self.forward(prepared)
        loss, dpreds, _ = self.batch_loss(preds, prepared, weights)
        self.backward(dpreds, cache)
        return loss, self.grads()

    # -- prediction -----------------------------------------------------------

    def predict(self, sample: TrainingSample, memory: NewsMemory) -> RiskForecast:
        """Forecast for one sample; reads nothing dated after the as-of date."""
        prepared = self.prepare([sample], memory)
        preds, _ = self.forward(prepared)
        return RiskForecast(
            as_of=sample.as_of,
            vol={h: float(preds[0, j]) for j, h in enumerate(HORIZONS)},
            var_1d=float(preds[0, 4]),
        )


# ---------------------------------------------------------------------------
# Loss / weighting / window operations
# ---------------------------------------------------------------------------


def multitask_loss(
    pred: np.ndarray,
    labels: SampleLabels,
    lambdas: MultiTaskWeights | None = None,
    var_alpha: float = 0.05,
) -> tuple[float, np.ndarray]:
    """Single-sample multi-task loss and gradient w.r.t. the 5 outputs.

    L = sum_h lambda_h (vhat_h - v_h)^2 + lambda_q * pinball_alpha(VaRhat, r_next)
    """
    lambdas = lambdas if lambdas is not None else MultiTaskWeights()
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    if p.shape != (5,):
        raise ValueError(f"pred shape {p.shape} != (5,)")
    lam = lambdas.vol_vector()
    target = np.array([labels.vol[h] for h in HORIZONS])
    diff = p[:4] - target
    u = labels.next_day_return - p[4]
    pin = max(var_alpha * u, (var_alpha - 1.0) * u)
    loss = float(diff**2 @ lam + lambdas.var * pin)
    grad = np.empty(5)
    grad[:4] = 2.0 * diff * lam
    g_u = var_alpha if u > 0.0 else var_alpha - 1.0
    grad[4] = lambdas.var * (-g_u)
    return loss, grad


def sample_weights(
    samples: Sequence[TrainingSample], as_of: date, decay: DecayConfig
) -> np.ndarray:
    """Normalized exponential age-decay weights, oldest lightest."""
    ages = []
    for s in samples:
        age = (as_of - s.as_of).days
        if age < 0:
            raise ValueError(f"sample at {s.as_of} is after as_of {as_of}")
        ages.append(age)
    w = np.exp(-decay.gamma_sample * np.asarray(ages, dtype=np.float64))
    return w / w.sum()


def select_window(
    returns: ReturnSeries | np.ndarray,
    cfg: WindowConfig,
    previous_window: int | None = None,
) -> int:
    """Training-history length in days from the regime-shift probe.

    A probe ratio above the threshold means recent volatility broke away
    from its recent past: shrink to ``w_min`` and relearn from fresh data.
    Otherwise extend the previous window by 30 days up to ``w_max``.  With
    no previous window the default is ``w_max`` (use all allowed history
    unless a shift is detected).
    """
    r = returns.returns if isinstance(returns, ReturnSeries) else np.asarray(returns)
    if len(r) < 120:
        raise ValueError(f"need >= 120 days of history, got {len(r)}")
    recent = float(np.std(r[-30:], ddof=1))
    prior = float(np.std(r[-120:-30], ddof=1))
    probe = recent / max(prior, 1e-12)
    if probe > cfg.shift_ratio_threshold:
        return cfg.w_min
    previous = cfg.w_max if previous_window is None else previous_window
    return min(previous + 30, cfg.w_max)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train(
    model: RiskLabsModel,
    samples: Sequence[TrainingSample],
    memory: NewsMemory,
    seed: int,
    history: ReturnSeries | None = None,
    epochs: int | None = None,
    lr: float | None = None,
) -> list[float]:
    """Fit the model in place; returns the per-epoch loss trace.

    Parameters are re-initialized from the seed, so two runs with identical
    inputs produce identical traces and parameters.  When ``history`` is
    given, the dynamic window probe selects how much sample history to keep;
    sample weights then decay exponentially with age.  A non-finite loss
    aborts with a diagnostic naming the offending sample.
    """
    samples = sorted(samples, key=lambda s: s.as_of)
    if len(samples) < 50:
        raise ValueError(f"need >= 50 samples to train, got {len(samples)}")
    if any(s.labels is None for s in samples):
        raise ValueError("training requires labeled samples")
    epochs = epochs if epochs is not None else model.config.train_epochs
    lr = lr if lr is not None else model.config.train_lr
    as_of = samples[-1].as_of

    kept = samples
    if history is not None:
        past = np.asarray(
            [r for d, r in zip(history.dates, history.returns) if d <= as_of]
        )
        if len(past) >= 120:
            window = select_window(past, model.config.window)
            kept = [s for s in samples if (as_of - s.as_of).days <= window]
            if not kept:
                kept = samples

    model.reinit(seed)
    weights = sample_weights(kept, as_of, model.config.decay)
    prepared = model.prepare(kept, memory)
    params = model.params()
    state = AdamState()
    lr_final = model.config.train_lr_final
    trace: list[float] = []
    for epoch in range(epochs):
        model.zero_grads()
        try:
            preds, cache = model.forward(prepared)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}: {exc}") from exc
        loss, dpreds, per_sample = model.batch_loss(preds, prepared, weights)
        if not np.isfinite(loss):
            bad = int(np.flatnonzero(~np.isfinite(per_sample))[0])
            raise NumericError(
                f"epoch {epoch}: non-finite loss at sample as_of={kept[bad].as_of}"
            )
        model.backward(dpreds, cache)
        grads = model.grads()
        if model.config.train_l2 > 0.0:
            for name, g in grads.items():
                if not name.endswith(".bias") and not name.split(".")[-1].startswith("b"):
                    g += model.config.train_l2 * params[name]
        step_lr = lr
        if lr_final is not None and epochs > 1:
            step_lr = lr + (lr_final - lr) * epoch / (epochs - 1)
        adam_step(params, grads, state, step_lr)
        trace.append(loss)
    _calibrate_var_head(model, prepared, weights)
    return trace


def _calibrate_var_head(
    model: RiskLabsModel, prepared: PreparedBatch, weights: np.ndarray
) -> None:
    """Refit the VaR output row on the frozen trunk (linear quantile fit).

    During joint training the squared-error heads keep reshaping the shared
    hidden layer, so the quantile head oscillates around calibration; with
    the trunk frozen this is a small convex problem that settles it.
    """
    epochs = model.config.var_calibration_epochs
    if epochs <= 0:
        return
    alpha = model.config.var_alpha
    features, _ = model._features_forward(prepared)
    hidden, _ = model.head_in.forward(features)
    realized = prepared.next_returns
    w_out = model.head_out.params["W"]
    b_out = model.head_out.params["b"]
    row = {"w": w_out[model.N_OUTPUTS - 1].copy(), "b": np.array([b_out[-1]])}
    state = AdamState()
    for _ in range(epochs):
        q = hidden @ row["w"] + row["b"][0]
        u = realized - q
        g_u = np.where(u > 0.0, alpha, alpha - 1.0)
        dq = -(weights * g_u)
        grads = {"w": hidden.T @ dq, "b": np.array([dq.sum()])}
        adam_step(row, grads, state, lr=0.01)
    w_out[model.N_OUTPUTS - 1] = row["w"]
    b_out[-1] = row["b"][0]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_model(model: RiskLabsModel, path: str | Path) -> None:
    """Write config header plus flat parameter document; bit-stable."""
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "config": model.config.to_dict(),
        "params": params_to_doc(model.params()),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_model(path: str | Path, analyzer=None) -> RiskLabsModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ValueError(
            f"unsupported model schema {doc.get('schema_version')!r}"
        )
    config = ModelConfig.from_dict(doc["config"])
    model = RiskLabsModel(config, seed=0, analyzer=analyzer)
    loaded = params_from_doc(doc["params"])
    params = model.params()
    if set(loaded) != set(params):
        missing = set(params) ^ set(loaded)
        raise ValueError(f"model file parameter mismatch: {sorted(missing)}")
    for name, arr in loaded.items():
        if params[name].shape != arr.shape:
            raise ValueError(
                f"parameter {name}: shape {arr.shape} != expected {params[name].shape}"
            )
        params[name][:] = arr
    return model
