"""Classical volatility and VaR baselines.

GARCH(1,1) with Gaussian conditional likelihood fitted by maximum
likelihood, EWMA variance, and historical-simulation VaR.  The variance
recursion is

    sigma2_t = omega + alpha * r_{t-1}**2 + beta * sigma2_{t-1}

with stationarity requiring ``alpha + beta < 1`` and unconditional variance
``omega / (1 - alpha - beta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.signal import lfilter

from .core import NumericError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GarchParams:
    """GARCH(1,1) parameters; stationary by construction."""

    omega: float
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not (
            np.isfinite(self.omega)
            and np.isfinite(self.alpha)
            and np.isfinite(self.beta)
        ):
            raise ValueError(f"non-finite GARCH params {self}")
        if self.omega <= 0:
            raise ValueError(f"omega > 0 violated (got {self.omega})")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"alpha, beta >= 0 violated (got {self.alpha}, {self.beta})")
        if self.alpha + self.beta >= 1:
            raise ValueError(
                f"alpha + beta < 1 violated (got {self.alpha + self.beta})"
            )

    @property
    def stationary_variance(self) -> float:
        return self.omega / (1.0 - self.alpha - self.beta)


@dataclass(frozen=True)
class GarchState:
    """Filter state after the last observed day."""

    last_return: float
    last_variance: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.last_variance) and self.last_variance > 0):
            raise ValueError(f"last_variance > 0 violated (got {self.last_variance})")


def garch_variance_series(
    params: GarchParams,
    returns: np.ndarray,
    initial_variance: float | None = None,
) -> np.ndarray:
    """Conditional variance path sigma2_t for t = 1..n.

    sigma2_1 defaults to the sample variance of ``returns``.  The recursion
    is an order-1 linear filter in r**2, evaluated with ``scipy.signal.lfilter``;
    tests pin it against an explicit per-step recursion.
    """
    r = np.asarray(returns, dtype=np.float64)
    if r.ndim != 1 or len(r) < 2:
        raise ValueError(f"need at least 2 returns, got shape {r.shape}")
    s0 = float(np.var(r, ddof=1)) if initial_variance is None else float(initial_variance)
    drive = params.omega + params.alpha * r[:-1] ** 2
    rest, _ = lfilter(
        [1.0], [1.0, -params.beta], drive, zi=np.array([params.beta * s0])
    )
    sigma2 = np.concatenate(([s0], rest))
    if np.any(sigma2 <= 0) or not np.all(np.isfinite(sigma2)):
        raise NumericError("conditional variance left the positive domain")
    return sigma2


def garch_loglik(params: GarchParams, returns: np.ndarray) -> float:
    """Gaussian log-likelihood of a return series under GARCH(1,1).

    ell = -0.5 * sum_t [ln 2*pi + ln sigma2_t + r_t**2 / sigma2_t]
    """
    r = np.asarray(returns, dtype=np.float64)
    if len(r) < 10:
        raise ValueError(f"need at least 10 returns, got {len(r)}")
    sigma2 = garch_variance_series(params, r)
    return float(-0.5 * np.sum(LOG_2PI + np.log(sigma2) + r**2 / sigma2))


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


_ALPHA_CAP = 1.0 - 1e-6


def _unpack(theta: np.ndarray) -> GarchParams:
    # omega = e^x; alpha = s(y)*(1-eps); beta = s(z)*(1-alpha): constraints
    # hold for every point the simplex visits.
    omega = math.exp(float(np.clip(theta[0], -700, 700)))
    alpha = _logistic(float(theta[1])) * _ALPHA_CAP
    beta = _logistic(float(theta[2])) * (1.0 - alpha) * _ALPHA_CAP
    return GarchParams(omega=omega, alpha=alpha, beta=beta)


def _pack(params: GarchParams) -> np.ndarray:
    def logit(p: float) -> float:
        p = min(max(p, 1e-12), 1.0 - 1e-12)
        return math.log(p / (1.0 - p))

    return np.array(
        [
            math.log(params.omega),
            logit(params.alpha / _ALPHA_CAP),
            logit(params.beta / ((1.0 - params.alpha) * _ALPHA_CAP)),
        ]
    )


def garch_fit(
    returns: np.ndarray,
    max_iter: int = 2000,
    tol: float = 1e-8,
) -> GarchParams:
    """Maximum-likelihood GARCH(1,1) fit.

    Derivative-free Nelder-Mead simplex on transformed parameters, so the
    positivity and stationarity constraints hold at every iterate.  Stops
    when the simplex spread falls below ``tol`` or after ``max_iter``
    iterations.
    """
    r = np.asarray(returns, dtype=np.float64)
    if len(r) < 100:
        raise ValueError(f"need at least 100 returns, got {len(r)}")
    sample_var = float(np.var(r, ddof=1))
    start = GarchParams(
        omega=max(sample_var, 1e-12) * 0.05, alpha=0.05, beta=0.90
    )
    try:
        start_ll = garch_loglik(start, r)
    except NumericError as exc:
        raise NumericError(f"degenerate input: {exc}") from exc
    if not np.isfinite(start_ll):
        raise NumericError("degenerate input: non-finite likelihood at start")

    def neg_loglik(theta: np.ndarray) -> float:
        try:
            value = -garch_loglik(_unpack(theta), r)
        except (NumericError, OverflowError):
            return 1e12
        return value if np.isfinite(value) else 1e12

    res = minimize(
        neg_loglik,
        _pack(start),
        method="Nelder-Mead",
        options={
            "xatol": tol,
            "fatol": tol,
            "maxiter": max_iter,
            "maxfev": 4 * max_iter,
        },
    )
    return _unpack(res.x)


def garch_forecast(params: GarchParams, state: GarchState, k: int) -> np.ndarray:
    """Per-day variance forecasts for the next ``k`` days.

    Day 1 applies the recursion to the current state; days j >= 2 decay
    geometrically toward the stationary variance:

        sigma2_{t+j} = vbar + (alpha+beta)**(j-1) * (sigma2_{t+1} - vbar)
    """
    if k < 1:
        raise ValueError(f"k >= 1 violated (got {k})")
    one_step = (
        params.omega
        + params.alpha * state.last_return**2
        + params.beta * state.last_variance
    )
    vbar = params.stationary_variance
    decay = (params.alpha + params.beta) ** np.arange(k)
    return vbar + decay * (one_step - vbar)


def garch_horizon_log_vol(params: GarchParams, state: GarchState, k: int) -> float:
    """Forecast log realized vol over ``k`` days: ln sqrt(mean daily variance)."""
    return float(0.5 * np.log(np.mean(garch_forecast(params, state, k))))


def ewma_vol(returns: np.ndarray, lam: float = 0.94) -> float:
    """EWMA variance estimate after folding in every return.

    sigma2_1 = r_1**2, then sigma2_{t} = lam*sigma2_{t-1} + (1-lam)*r_{t-1}**2;
    the returned value is the estimate for the day after the last return.
    """
    r = np.asarray(returns, dtype=np.float64)
    if len(r) == 0:
        raise ValueError("returns nonempty violated")
    if not (0.0 < lam < 1.0):
        raise ValueError(f"0 < lambda < 1 violated (got {lam})")
    v = float(r[0] ** 2)
    for x in r:
        v = lam * v + (1.0 - lam) * float(x) ** 2
    return v


def historical_var(returns: np.ndarray, alpha: float = 0.05) -> float:
    """Historical-simulation VaR: lower empirical quantile, no interpolation.

    Returns the k-th smallest return with k = ceil(alpha * N).
    """
    r = np.asarray(returns, dtype=np.float64)
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"0 < alpha < 1 violated (got {alpha})")
    min_n = math.ceil(1.0 / alpha)
    if len(r) < min_n:
        raise ValueError(f"window.len >= {min_n} violated (got {len(r)})")
    k = math.ceil(alpha * len(r))
    return float(np.partition(r, k - 1)[k - 1])
