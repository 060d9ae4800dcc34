"""Minimal differentiable kernels in 64-bit numpy.

Dense layers, a 4-gate recurrent cell with full backpropagation through
time, multi-head attention pooling over variable-length segment sets,
MSE and pinball losses, an adaptive-moment optimizer, and a central
finite-difference gradient checker.

Every layer keeps its parameters and accumulated gradients in plain dicts
of float64 arrays (``layer.params`` / ``layer.grads``), so the optimizer
and the checker can treat any collection of parameters uniformly.  All
forward passes are pure given the parameters; training is single-threaded
and deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .core import NumericError

Params = dict[str, np.ndarray]


def _assert_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")


def _shape_error(what: str, got, expected) -> ValueError:
    return ValueError(f"{what}: got shape {tuple(got)}, expected {tuple(expected)}")


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                 fan_in: int, fan_out: int) -> np.ndarray:
    """Seeded uniform(-s, s) init with s = sqrt(6 / (fan_in + fan_out))."""
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / np.sum(z)


_ACTIVATIONS = ("identity", "tanh", "relu")


class Dense:
    """Fully connected layer y = act(W x + b), batched over rows."""

    def __init__(self, in_dim: int, out_dim: int, activation: str = "identity",
                 rng: np.random.Generator | None = None):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.params: Params = {
            "W": init_uniform(rng, (out_dim, in_dim), in_dim, out_dim),
            "b": np.zeros(out_dim),
        }
        self.grads: Params = {k: np.zeros_like(v) for k, v in self.params.items()}

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[:] = 0.0

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.in_dim:
            raise _shape_error("Dense input", x.shape, ("B", self.in_dim))
        pre = x @ self.params["W"].T + self.params["b"]
        if self.activation == "tanh":
            y = np.tanh(pre)
        elif self.activation == "relu":
            y = np.maximum(pre, 0.0)
        else:
            y = pre
        _assert_finite("Dense output", y)
        return y, {"x": x, "pre": pre, "y": y}

    def backward(self, dy: np.ndarray, cache: dict) -> np.ndarray:
        dy = np.atleast_2d(np.asarray(dy, dtype=np.float64))
        if self.activation == "tanh":
            dpre = dy * (1.0 - cache["y"] ** 2)
        elif self.activation == "relu":
            dpre = dy * (cache["pre"] > 0.0)
        else:
            dpre = dy
        self.grads["W"] += dpre.T @ cache["x"]
        self.grads["b"] += dpre.sum(axis=0)
        return dpre @ self.params["W"]


class LSTMCell:
    """Standard 4-gate recurrent cell unrolled over a sequence.

    Gate weights act on the concatenation [h_{t-1}, x_t], so each weight
    matrix has shape (H, H + in).  ``forward`` runs the whole sequence from
    zero initial state and returns the final hidden state; ``backward``
    propagates through time and accumulates parameter gradients.
    """

    GATES = ("i", "f", "o", "c")

    def __init__(self, in_dim: int, hidden: int,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim = in_dim
        self.hidden = hidden
        z = hidden + in_dim
        self.params: Params = {}
        for g in self.GATES:
            self.params[f"W_{g}"] = init_uniform(rng, (hidden, z), z, hidden)
            self.params[f"b_{g}"] = np.zeros(hidden)
        self.grads: Params = {k: np.zeros_like(v) for k, v in self.params.items()}

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[:] = 0.0

    def forward(self, xs: np.ndarray) -> tuple[np.ndarray, dict]:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim == 2:  # single sequence (T, in)
            xs = xs[None, :, :]
        if xs.ndim != 3 or xs.shape[2] != self.in_dim:
            raise _shape_error("LSTM input", xs.shape, ("B", "T", self.in_dim))
        batch, steps, _ = xs.shape
        h = np.zeros((batch, self.hidden))
        c = np.zeros((batch, self.hidden))
        gates = []
        for t in range(steps):
            z = np.concatenate([h, xs[:, t, :]], axis=1)
            i = sigmoid(z @ self.params["W_i"].T + self.params["b_i"])
            f = sigmoid(z @ self.params["W_f"].T + self.params["b_f"])
            o = sigmoid(z @ self.params["W_o"].T + self.params["b_o"])
            g = np.tanh(z @ self.params["W_c"].T + self.params["b_c"])
            c_prev = c
            c = f * c_prev + i * g
            tanh_c = np.tanh(c)
            h = o * tanh_c
            gates.append(
                {"z": z, "i": i, "f": f, "o": o, "g": g,
                 "c": c, "c_prev": c_prev, "tanh_c": tanh_c}
            )
        _assert_finite("LSTM hidden state", h)
        return h, {"xs": xs, "gates": gates}

    def backward(self, dh: np.ndarray, cache: dict) -> np.ndarray:
        xs = cache["xs"]
        batch, steps, _ = xs.shape
        dh = np.asarray(dh, dtype=np.float64).reshape(batch, self.hidden)
        dxs = np.zeros_like(xs)
        dc = np.zeros((batch, self.hidden))
        for t in reversed(range(steps)):
            st = cache["gates"][t]
            do = dh * st["tanh_c"]
            dc = dc + dh * st["o"] * (1.0 - st["tanh_c"] ** 2)
            di = dc * st["g"]
            df = dc * st["c_prev"]
            dg = dc * st["i"]
            dz = np.zeros_like(st["z"])
            for name, dgate, val in (
                ("i", di, st["i"]),
                ("f", df, st["f"]),
                ("o", do, st["o"]),
            ):
                dpre = dgate * val * (1.0 - val)
                self.grads[f"W_{name}"] += dpre.T @ st["z"]
                self.grads[f"b_{name}"] += dpre.sum(axis=0)
                dz += dpre @ self.params[f"W_{name}"]
            dpre = dg * (1.0 - st["g"] ** 2)
            self.grads["W_c"] += dpre.T @ st["z"]
            self.grads["b_c"] += dpre.sum(axis=0)
            dz += dpre @ self.params["W_c"]
            dh = dz[:, : self.hidden]
            dxs[:, t, :] = dz[:, self.hidden:]
            dc = dc * st["f"]
        return dxs


class AttentionPool:
    """Multi-head attention pooling of a variable-length segment set.

    Each head scores segments against a learned query vector, softmaxes the
    scores into weights, and averages projected segment values; head outputs
    are concatenated and linearly projected.  Output dim defaults to the
    input dim so the pooled vector can stand in for a single segment.
    """

    def __init__(self, in_dim: int, heads: int = 2, d_k: int | None = None,
                 d_v: int | None = None, out_dim: int | None = None,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        if heads < 1:
            raise ValueError(f"heads >= 1 violated (got {heads})")
        self.in_dim = in_dim
        self.heads = heads
        self.d_k = d_k if d_k is not None else max(1, in_dim // heads)
        self.d_v = d_v if d_v is not None else max(1, in_dim // heads)
        self.out_dim = out_dim if out_dim is not None else in_dim
        self.params: Params = {
            "q": init_uniform(rng, (heads, self.d_k), self.d_k, 1),
            "Wk": init_uniform(rng, (heads, self.d_k, in_dim), in_dim, self.d_k),
            "Wv": init_uniform(rng, (heads, self.d_v, in_dim), in_dim, self.d_v),
            "Wo": init_uniform(
                rng, (self.out_dim, heads * self.d_v), heads * self.d_v, self.out_dim
            ),
        }
        self.grads: Params = {k: np.zeros_like(v) for k, v in self.params.items()}

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[:] = 0.0

    def forward(self, segments: np.ndarray) -> tuple[np.ndarray, dict]:
        s = np.atleast_2d(np.asarray(segments, dtype=np.float64))
        if s.shape[1] != self.in_dim:
            raise _shape_error("AttentionPool input", s.shape, ("n", self.in_dim))
        if s.shape[0] < 1:
            raise ValueError("AttentionPool needs at least one segment")
        scale = 1.0 / math.sqrt(self.d_k)
        keys, values, weights = [], [], []
        pooled = np.empty((self.heads, self.d_v))
        for i in range(self.heads):
            k = s @ self.params["Wk"][i].T
            v = s @ self.params["Wv"][i].T
            w = softmax((k @ self.params["q"][i]) * scale)
            pooled[i] = w @ v
            keys.append(k)
            values.append(v)
            weights.append(w)
        concat = pooled.reshape(-1)
        out = self.params["Wo"] @ concat
        _assert_finite("AttentionPool output", out)
        return out, {
            "s": s, "keys": keys, "values": values,
            "weights": weights, "concat": concat,
        }

    def backward(self, dout: np.ndarray, cache: dict) -> np.ndarray:
        dout = np.asarray(dout, dtype=np.float64).reshape(self.out_dim)
        s = cache["s"]
        scale = 1.0 / math.sqrt(self.d_k)
        self.grads["Wo"] += np.outer(dout, cache["concat"])
        dconcat = (self.params["Wo"].T @ dout).reshape(self.heads, self.d_v)
        ds = np.zeros_like(s)
        for i in range(self.heads):
            k, v, w = cache["keys"][i], cache["values"][i], cache["weights"][i]
            dhead = dconcat[i]
            dv = np.outer(w, dhead)
            dw = v @ dhead
            dscores = w * (dw - float(w @ dw))
            dkq = dscores * scale
            self.grads["q"][i] += k.T @ dkq
            dk = np.outer(dkq, self.params["q"][i])
            self.grads["Wk"][i] += dk.T @ s
            self.grads["Wv"][i] += dv.T @ s
            ds += dk @ self.params["Wk"][i] + dv @ self.params["Wv"][i]
        return ds

    def pooling_weights(self, segments: np.ndarray) -> np.ndarray:
        """Per-head softmax weights over segments, shape (heads, n)."""
        _, cache = self.forward(segments)
        return np.stack(cache["weights"])


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``pred``."""
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    t = np.asarray(target, dtype=np.float64).reshape(-1)
    if p.shape != t.shape:
        raise _shape_error("mse_loss target", t.shape, p.shape)
    diff = p - t
    return float(np.mean(diff**2)), 2.0 * diff / len(p)


def pinball_loss(pred_q: np.ndarray, realized: np.ndarray,
                 alpha: float) -> tuple[float, np.ndarray]:
    """Quantile (pinball) loss, mean over samples, plus subgradient.

    loss_i = max(alpha*(y_i - q_i), (alpha-1)*(y_i - q_i)).  At y == q the
    subgradient with respect to u = y - q takes the lower branch alpha - 1,
    so the gradient with respect to the prediction is 1 - alpha there.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"0 < alpha < 1 violated (got {alpha})")
    q = np.asarray(pred_q, dtype=np.float64).reshape(-1)
    y = np.asarray(realized, dtype=np.float64).reshape(-1)
    if q.shape != y.shape:
        raise _shape_error("pinball_loss realized", y.shape, q.shape)
    u = y - q
    loss = float(np.mean(np.maximum(alpha * u, (alpha - 1.0) * u)))
    g_u = np.where(u > 0.0, alpha, alpha - 1.0)
    return loss, -g_u / len(q)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment estimates per parameter name."""

    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0


def adam_step(params: Params, grads: Params, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place adaptive-moment update; deterministic given its inputs."""
    state.t += 1
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g**2
        m_hat = state.m[name] / (1.0 - beta1**state.t)
        v_hat = state.v[name] / (1.0 - beta2**state.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Worst relative error per parameter from central finite differences."""

    per_param: dict[str, float]
    tolerance: float

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.per_param, key=self.per_param.get)
        return name, self.per_param[name]

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.per_param.values())

    def failures(self) -> list[str]:
        return [n for n, e in self.per_param.items() if e >= self.tolerance]


def grad_check(loss_fn: Callable[[], float], params: Params,
               analytic: Mapping[str, np.ndarray], step: float = 1e-5,
               tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``loss_fn`` must recompute the scalar loss from the current parameter
    values; parameters are perturbed in place and restored.  The relative
    error per element is |a - n| / max(|a| + |n|, floor), where the floor
    scales with the loss magnitude so that elements whose true gradient sits
    below the difference-quotient noise (eps * |loss| / step) cannot fail
    the check spuriously.  Each parameter reports its worst element.
    """
    base_loss = abs(loss_fn())
    floor = max(1e-8, 1e-6 * (1.0 + base_loss))
    per_param: dict[str, float] = {}
    for name, p in params.items():
        a = np.asarray(analytic[name], dtype=np.float64)
        if a.shape != p.shape:
            raise _shape_error(f"analytic grad {name}", a.shape, p.shape)
        worst = 0.0
        flat = p.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss_fn()
            flat[idx] = orig - step
            down = loss_fn()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * step)
            ai = a.reshape(-1)[idx]
            rel = abs(ai - numeric) / max(abs(ai) + abs(numeric), floor)
            worst = max(worst, rel)
        per_param[name] = worst
    return GradCheckReport(per_param=per_param, tolerance=tolerance)


# ---------------------------------------------------------------------------
# Parameter serialization
# ---------------------------------------------------------------------------


def params_to_doc(params: Params) -> dict:
    """Flat JSON document: parameter name -> {shape, data}."""
    return {
        name: {"shape": list(arr.shape), "data": [float(x) for x in arr.reshape(-1)]}
        for name, arr in params.items()
    }


def params_from_doc(doc: Mapping) -> Params:
    out: Params = {}
    for name, entry in doc.items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        out[name] = arr
    return out
