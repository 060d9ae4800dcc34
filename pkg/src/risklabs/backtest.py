"""Rolling out-of-sample evaluation with VaR-coverage statistics.

Every method sees only a truncated view of the data at each evaluation day
(the view physically contains nothing dated later), predicts the next-day
VaR quantile and per-horizon log volatility, and is scored against realized
outcomes: per-horizon MSE in log-vol space, the exceedance rate of the VaR
track, the Kupiec proportion-of-failures statistic, and the responsiveness
(day-over-day variability) of the VaR predictions.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .classical import (
    GarchState,
    garch_fit,
    garch_forecast,
    garch_variance_series,
    historical_var,
)
from .core import HORIZONS, RiskForecast
from .data import MarketData, feature_sample, realized_log_vol
from .encoders import NewsMemory
from .model import RiskLabsModel

#: chi-square(1) 95% cutoff used for the Kupiec decision.
KUPIEC_CUTOFF = 3.84


@dataclass(frozen=True)
class MethodUnderTest:
    """A named predictor: (data up to t, t) -> RiskForecast.

    The backtester always hands the predictor a truncated view, so the
    predictor cannot reach data after t even if it tries.
    """

    name: str
    predictor: Callable[[MarketData, date], RiskForecast]


@dataclass(frozen=True)
class CurvePoint:
    as_of: date
    var_pred: float
    realized_return: float


@dataclass(frozen=True)
class EvalReport:
    """Out-of-sample metrics for one method over one evaluation period."""

    method: str
    vol_mse: dict[int, float]
    var_exceedance_rate: float
    kupiec_stat: float
    kupiec_reject: bool
    responsiveness: float
    curves: tuple[CurvePoint, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vol_mse", dict(self.vol_mse))
        object.__setattr__(self, "curves", tuple(self.curves))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def var_exceedance_rate(var_preds: Sequence[float], realized: Sequence[float]) -> float:
    """Fraction of days the realized return fell strictly below predicted VaR.

    Ties count as non-violations.
    """
    v = np.asarray(var_preds, dtype=np.float64)
    r = np.asarray(realized, dtype=np.float64)
    if v.shape != r.shape:
        raise ValueError(f"length mismatch: {v.shape} vs {r.shape}")
    if len(v) == 0:
        raise ValueError("empty prediction series")
    return float(np.mean(r < v))


def kupiec_pof(exceedances: int, n: int, alpha: float) -> float:
    """Kupiec proportion-of-failures likelihood-ratio statistic.

    LR = -2 ln[(1-a)^(N-x) a^x] + 2 ln[(1-x/N)^(N-x) (x/N)^x], 0*ln0 := 0.
    Zero exactly when x/N == alpha; compare against ``KUPIEC_CUTOFF``.
    """
    if not (0 <= exceedances <= n):
        raise ValueError(f"0 <= x <= N violated (x={exceedances}, N={n})")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"0 < alpha < 1 violated (got {alpha})")

    def xlogy(a: float, b: float) -> float:
        return 0.0 if a == 0 else a * math.log(b)

    x = exceedances
    rate = x / n
    null = xlogy(n - x, 1.0 - alpha) + xlogy(x, alpha)
    alt = xlogy(n - x, 1.0 - rate) + xlogy(x, rate)
    return max(0.0, -2.0 * null + 2.0 * alt)


def responsiveness(var_preds: Sequence[float]) -> float:
    """Sample std of day-over-day VaR changes; 0 for a flat track."""
    v = np.asarray(var_preds, dtype=np.float64)
    if len(v) < 2:
        raise ValueError(f"need >= 2 predictions, got {len(v)}")
    diffs = np.diff(v)
    if len(diffs) < 2:
        return 0.0
    return float(np.std(diffs, ddof=1))


# ---------------------------------------------------------------------------
# Rolling backtest
# ---------------------------------------------------------------------------


def rolling_backtest(
    method: MethodUnderTest,
    data: MarketData,
    split_date: date,
    alpha: float = 0.05,
) -> EvalReport:
    """Evaluate a method on every trading day strictly after the split.

    For each evaluation day t the predictor receives ``data.truncated(t)``;
    its 1-day VaR is scored against the realized next-day return and its
    volatility forecasts against realized log-vol labels computed from the
    full series (per horizon, where enough future days exist).
    """
    prices = data.prices
    n = len(prices)
    rr = data.returns().returns  # rr[j] is the return dated prices.dates[j+1]
    eval_idx = [
        i for i in range(n - 1) if prices.dates[i] > split_date
    ]
    if len(eval_idx) < 100:
        raise ValueError(
            f"split leaves {len(eval_idx)} evaluation days, need >= 100"
        )

    var_preds, realized, curves = [], [], []
    errors = {h: [] for h in HORIZONS}
    for i in eval_idx:
        as_of = prices.dates[i]
        view = data.truncated(as_of)
        forecast = method.predictor(view, as_of)
        var_preds.append(forecast.var_1d)
        realized.append(float(rr[i]))
        curves.append(
            CurvePoint(as_of=as_of, var_pred=forecast.var_1d, realized_return=float(rr[i]))
        )
        for h in HORIZONS:
            if i + h <= n - 1:
                label = realized_log_vol(rr[i : i + h])
                errors[h].append((forecast.vol[h] - label) ** 2)

    rate = var_exceedance_rate(var_preds, realized)
    x = int(np.sum(np.asarray(realized) < np.asarray(var_preds)))
    stat = kupiec_pof(x, len(var_preds), alpha)
    return EvalReport(
        method=method.name,
        vol_mse={h: float(np.mean(errors[h])) if errors[h] else float("nan") for h in HORIZONS},
        var_exceedance_rate=rate,
        kupiec_stat=stat,
        kupiec_reject=stat > KUPIEC_CUTOFF,
        responsiveness=responsiveness(var_preds),
        curves=tuple(curves),
    )


# ---------------------------------------------------------------------------
# Standard methods
# ---------------------------------------------------------------------------


def historical_method(window: Optional[int] = 250, alpha: float = 0.05) -> MethodUnderTest:
    """Historical simulation: trailing-window empirical quantile VaR.

    ``window=None`` uses all available history (expanding window).  The
    volatility forecast per horizon is the trailing realized log-vol over
    that horizon's own length (a random-walk forecast).
    """

    def predict(view: MarketData, as_of: date) -> RiskForecast:
        r = view.returns().returns
        tail = r if window is None else r[-window:]
        return RiskForecast(
            as_of=as_of,
            vol={h: realized_log_vol(r[-h:]) for h in HORIZONS},
            var_1d=historical_var(tail, alpha),
        )

    name = "historical" if window is not None else "historical_expanding"
    return MethodUnderTest(name=name, predictor=predict)


def garch_method(alpha: float = 0.05, refit_every: Optional[int] = None) -> MethodUnderTest:
    """GARCH(1,1) fit on first use (optionally refit every k calls).

    The 1-day VaR is the Gaussian alpha-quantile scaled by the one-step
    conditional vol; horizon vols aggregate the per-day variance forecasts.
    """
    z = float(norm.ppf(alpha))
    fitted: dict = {"params": None, "calls": 0}

    def predict(view: MarketData, as_of: date) -> RiskForecast:
        r = view.returns().returns
        if fitted["params"] is None or (
            refit_every is not None and fitted["calls"] % refit_every == 0
        ):
            fitted["params"] = garch_fit(r)
        fitted["calls"] += 1
        params = fitted["params"]
        sigma2 = garch_variance_series(params, r)
        state = GarchState(last_return=float(r[-1]), last_variance=float(sigma2[-1]))
        per_day = {h: garch_forecast(params, state, h) for h in HORIZONS}
        return RiskForecast(
            as_of=as_of,
            vol={h: float(0.5 * np.log(np.mean(per_day[h]))) for h in HORIZONS},
            var_1d=z * math.sqrt(per_day[HORIZONS[0]][0]),
        )

    return MethodUnderTest(name="garch", predictor=predict)


def risklabs_method(model: RiskLabsModel) -> MethodUnderTest:
    """A trained multi-source model queried on features built from the view."""

    def predict(view: MarketData, as_of: date) -> RiskForecast:
        sample = feature_sample(view.prices, view.news, view.events, as_of)
        memory = NewsMemory(view.news).before_date(as_of)
        return model.predict(sample, memory)

    return MethodUnderTest(name="risklabs", predictor=predict)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def emit_report(reports: Sequence[EvalReport], out_dir: str | Path) -> dict[str, Path]:
    """Write metrics.csv and curves.json; bit-stable for identical reports.

    metrics.csv columns: method,metric,horizon,value.
    curves.json: array of {date, method, var_pred, realized_return}.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / "metrics.csv"
    curves_path = out / "curves.json"
    with metrics_path.open("w", newline="") as fh:
        fh.write("method,metric,horizon,value\n")
        for rep in reports:
            for h in HORIZONS:
                fh.write(f"{rep.method},vol_mse,{h},{rep.vol_mse[h]!r}\n")
            fh.write(f"{rep.method},var_exceedance_rate,,{rep.var_exceedance_rate!r}\n")
            fh.write(f"{rep.method},kupiec_stat,,{rep.kupiec_stat!r}\n")
            fh.write(f"{rep.method},kupiec_reject,,{int(rep.kupiec_reject)}\n")
            fh.write(f"{rep.method},responsiveness,,{rep.responsiveness!r}\n")
    rows = [
        {
            "date": p.as_of.isoformat(),
            "method": rep.method,
            "var_pred": float(p.var_pred),
            "realized_return": float(p.realized_return),
        }
        for rep in reports
        for p in rep.curves
    ]
    curves_path.write_text(json.dumps(rows, sort_keys=True, indent=1) + "\n")
    return {"metrics": metrics_path, "curves": curves_path}


def read_metrics(path: str | Path) -> dict[tuple[str, str, Optional[int]], float]:
    """Parse metrics.csv back into {(method, metric, horizon): value}."""
    out: dict[tuple[str, str, Optional[int]], float] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            horizon = int(row["horizon"]) if row["horizon"] else None
            out[(row["method"], row["metric"], horizon)] = float(row["value"])
    return out


def read_curves(path: str | Path) -> list[dict]:
    return json.loads(Path(path).read_text())
