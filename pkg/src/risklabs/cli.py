"""Command-line entry point: synth | fit | backtest | report.

Every command is reproducible: inputs, config and seed fully determine the
outputs.  Options can come from a flat ``key = value`` config file
(``--config PATH``); explicit flags override file values, which override
defaults.  Unknown config keys are rejected.

Exit codes: 0 success, 2 usage/config error, 3 numeric failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import date
from pathlib import Path
from typing import Optional, Sequence

from .analyzer import make_analyzer
from .backtest import (
    EvalReport,
    emit_report,
    garch_method,
    historical_method,
    read_curves,
    read_metrics,
    risklabs_method,
    rolling_backtest,
)
from .classical import GarchParams
from .core import HORIZONS, DataFormatError, NumericError
from .data import (
    MarketData,
    RegimeShift,
    SynthConfig,
    build_samples,
    load_market,
    synth_generate,
    write_dataset,
)
from .encoders import NewsMemory
from .model import (
    DecayConfig,
    ModelConfig,
    RiskLabsModel,
    WindowConfig,
    load_model,
    save_model,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


class ConfigError(ValueError):
    """Bad config file or inconsistent options."""


# ---------------------------------------------------------------------------
# Config file handling
# ---------------------------------------------------------------------------


def parse_config_file(path: Path) -> dict[str, str]:
    """Flat ``key = value`` file; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, value = body.split("=", 1)
        values[key.strip()] = value.strip()
    return values


_OPTION_TYPES = {
    "out": str, "seed": int, "analyzer": str, "ticker": str,
    "days": int, "omega": float, "alpha": float, "beta": float,
    "news_rate": float, "shock_factor": float,
    "regime_day": int, "regime_mult": float,
    "prices": str, "news": str, "events": str,
    "epochs": int, "lr": float, "hidden": int, "heads": int,
    "fused_dim": int, "head_hidden": int, "gamma_sample": float,
    "w_min": int, "w_max": int, "shift_threshold": float,
    "model": str, "methods": str, "split": str,
    "var_alpha": float, "hist_window": int,
    "in_dir": str,
}


def merge_options(args: argparse.Namespace, allowed: Sequence[str]) -> dict:
    """defaults < config file < explicit flags, with unknown keys rejected."""
    merged: dict = {}
    if getattr(args, "config", None):
        file_values = parse_config_file(Path(args.config))
        unknown = sorted(set(file_values) - set(allowed))
        if unknown:
            raise ConfigError(f"unknown config keys for this command: {unknown}")
        for key, raw in file_values.items():
            try:
                merged[key] = _OPTION_TYPES[key](raw)
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from exc
    for key in allowed:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    return merged


def _require(options: dict, key: str, command: str):
    if options.get(key) is None:
        raise ConfigError(f"{command}: missing required option '{key}'")
    return options[key]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

_SYNTH_KEYS = (
    "out", "seed", "days", "omega", "alpha", "beta",
    "news_rate", "shock_factor", "regime_day", "regime_mult",
)


def cmd_synth(args: argparse.Namespace) -> int:
    opts = merge_options(args, _SYNTH_KEYS)
    seed = _require(opts, "seed", "synth")
    out = Path(opts.get("out", "out"))
    regime = None
    if (opts.get("regime_day") is None) != (opts.get("regime_mult") is None):
        raise ConfigError("synth: regime_day and regime_mult must be given together")
    if opts.get("regime_day") is not None:
        regime = RegimeShift(day=opts["regime_day"], vol_multiplier=opts["regime_mult"])
    config = SynthConfig(
        n_days=opts.get("days", 1000),
        garch=GarchParams(
            omega=opts.get("omega", 0.05),
            alpha=opts.get("alpha", 0.10),
            beta=opts.get("beta", 0.85),
        ),
        news_rate=opts.get("news_rate", 0.0),
        shock_factor=opts.get("shock_factor", 1.0),
        regime_shift=regime,
        seed=seed,
    )
    paths = write_dataset(synth_generate(config), out)
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return EXIT_OK


_FIT_KEYS = (
    "out", "seed", "analyzer", "ticker", "prices", "news", "events",
    "epochs", "lr", "hidden", "heads", "fused_dim", "head_hidden",
    "gamma_sample", "w_min", "w_max", "shift_threshold",
)


def _model_config(opts: dict) -> ModelConfig:
    base = ModelConfig()
    return ModelConfig(
        hidden=opts.get("hidden", base.hidden),
        heads=opts.get("heads", base.heads),
        fused_dim=opts.get("fused_dim", base.fused_dim),
        head_hidden=opts.get("head_hidden", base.head_hidden),
        decay=DecayConfig(
            gamma_sample=opts.get("gamma_sample", base.decay.gamma_sample)
        ),
        window=WindowConfig(
            w_min=opts.get("w_min", base.window.w_min),
            w_max=opts.get("w_max", base.window.w_max),
            shift_ratio_threshold=opts.get(
                "shift_threshold", base.window.shift_ratio_threshold
            ),
        ),
        train_epochs=opts.get("epochs", base.train_epochs),
        train_lr=opts.get("lr", base.train_lr),
    )


def _load_data(opts: dict, command: str) -> MarketData:
    prices = _require(opts, "prices", command)
    return load_market(
        prices, opts.get("news"), opts.get("events"), ticker=opts.get("ticker")
    )


def cmd_fit(args: argparse.Namespace) -> int:
    opts = merge_options(args, _FIT_KEYS)
    seed = _require(opts, "seed", "fit")
    out = Path(opts.get("out", "out"))
    data = _load_data(opts, "fit")
    samples, skipped = build_samples(
        data.prices, data.news, data.events, anchor="daily"
    )
    if skipped:
        print(f"skipped {skipped} anchors with insufficient history", file=sys.stderr)
    analyzer = make_analyzer(opts.get("analyzer", "stub"))
    model = RiskLabsModel(_model_config(opts), seed=seed, analyzer=analyzer)
    trace = train(
        model,
        samples,
        NewsMemory(data.news),
        seed=seed,
        history=data.returns(),
    )
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / "model.json"
    save_model(model, model_path)
    trace_path = out / "loss_trace.csv"
    with trace_path.open("w", newline="") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(trace):
            fh.write(f"{i},{loss!r}\n")
    print(f"wrote model: {model_path}")
    print(f"wrote loss trace: {trace_path} (final loss {trace[-1]:.6g})")
    return EXIT_OK


_BACKTEST_KEYS = (
    "out", "seed", "analyzer", "ticker", "prices", "news", "events",
    "model", "methods", "split", "var_alpha", "hist_window",
    "epochs", "lr", "hidden", "heads", "fused_dim", "head_hidden",
    "gamma_sample", "w_min", "w_max", "shift_threshold",
)


def cmd_backtest(args: argparse.Namespace) -> int:
    opts = merge_options(args, _BACKTEST_KEYS)
    out = Path(opts.get("out", "out"))
    data = _load_data(opts, "backtest")
    split = date.fromisoformat(_require(opts, "split", "backtest"))
    if split >= data.prices.dates[-1]:
        raise ConfigError(
            f"backtest: split {split} is not before the last trading day "
            f"{data.prices.dates[-1]}"
        )
    alpha = opts.get("var_alpha", 0.05)
    names = [m.strip() for m in opts.get("methods", "historical,garch,risklabs").split(",") if m.strip()]
    methods = []
    for name in names:
        if name == "historical":
            methods.append(historical_method(window=opts.get("hist_window", 250), alpha=alpha))
        elif name == "garch":
            methods.append(garch_method(alpha=alpha))
        elif name == "risklabs":
            if opts.get("model"):
                model = load_model(opts["model"], analyzer=make_analyzer(opts.get("analyzer", "stub")))
            else:
                seed = _require(opts, "seed", "backtest (training risklabs)")
                trainview = data.truncated(split)
                samples, _ = build_samples(
                    trainview.prices, trainview.news, trainview.events, anchor="daily"
                )
                model = RiskLabsModel(
                    _model_config(opts), seed=seed,
                    analyzer=make_analyzer(opts.get("analyzer", "stub")),
                )
                train(
                    model, samples, NewsMemory(trainview.news),
                    seed=seed, history=trainview.returns(),
                )
            methods.append(risklabs_method(model))
        else:
            raise ConfigError(f"backtest: unknown method {name!r}")
    reports: list[EvalReport] = []
    for method in methods:
        report = rolling_backtest(method, data, split, alpha=alpha)
        reports.append(report)
        print(
            f"{method.name}: exceedance {report.var_exceedance_rate:.4f}, "
            f"kupiec {report.kupiec_stat:.3f} "
            f"({'reject' if report.kupiec_reject else 'accept'}), "
            f"responsiveness {report.responsiveness:.5f}"
        )
    paths = emit_report(reports, out)
    for name, path in paths.items():
        print(f"wrote {name}: {path}")
    return EXIT_OK


_REPORT_KEYS = ("in_dir", "out")


def cmd_report(args: argparse.Namespace) -> int:
    opts = merge_options(args, _REPORT_KEYS)
    in_dir = Path(opts.get("in_dir", opts.get("out", "out")))
    metrics = read_metrics(in_dir / "metrics.csv")
    curves = read_curves(in_dir / "curves.json")
    methods = sorted({m for m, _, _ in metrics})
    lines = ["risk backtest summary", "====================="]
    for m in methods:
        lines.append(f"\nmethod: {m}")
        mses = ", ".join(
            f"{h}d={metrics[(m, 'vol_mse', h)]:.4f}" for h in HORIZONS
            if (m, "vol_mse", h) in metrics
        )
        lines.append(f"  vol mse (log-vol space): {mses}")
        lines.append(
            f"  var exceedance rate: {metrics[(m, 'var_exceedance_rate', None)]:.4f}"
        )
        decision = "reject" if metrics[(m, "kupiec_reject", None)] else "accept"
        lines.append(
            f"  kupiec: {metrics[(m, 'kupiec_stat', None)]:.3f} ({decision} at 3.84)"
        )
        lines.append(
            f"  responsiveness: {metrics[(m, 'responsiveness', None)]:.5f}"
        )
        n_days = sum(1 for row in curves if row["method"] == m)
        lines.append(f"  evaluation days: {n_days}")
    text = "\n".join(lines) + "\n"
    (in_dir / "summary.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="risklabs",
        description="Synthetic data, model fitting, and VaR backtesting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="random seed")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    add_common(p_synth)
    p_synth.add_argument("--days", type=int, help="number of return days")
    p_synth.add_argument("--omega", type=float)
    p_synth.add_argument("--alpha", type=float)
    p_synth.add_argument("--beta", type=float)
    p_synth.add_argument("--news-rate", dest="news_rate", type=float)
    p_synth.add_argument("--shock-factor", dest="shock_factor", type=float)
    p_synth.add_argument("--regime-day", dest="regime_day", type=int)
    p_synth.add_argument("--regime-mult", dest="regime_mult", type=float)
    p_synth.set_defaults(func=cmd_synth)

    def add_data(p: argparse.ArgumentParser) -> None:
        p.add_argument("--prices", help="prices CSV path")
        p.add_argument("--news", help="news JSONL path")
        p.add_argument("--events", help="events JSONL path")
        p.add_argument("--ticker", help="ticker (needed for multi-ticker files)")
        p.add_argument("--analyzer", choices=["stub", "remote"])

    def add_model_opts(p: argparse.ArgumentParser) -> None:
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--hidden", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--fused-dim", dest="fused_dim", type=int)
        p.add_argument("--head-hidden", dest="head_hidden", type=int)
        p.add_argument("--gamma-sample", dest="gamma_sample", type=float)
        p.add_argument("--w-min", dest="w_min", type=int)
        p.add_argument("--w-max", dest="w_max", type=int)
        p.add_argument("--shift-threshold", dest="shift_threshold", type=float)

    p_fit = sub.add_parser("fit", help="train the model on a dataset")
    add_common(p_fit)
    add_data(p_fit)
    add_model_opts(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_back = sub.add_parser("backtest", help="rolling out-of-sample evaluation")
    add_common(p_back)
    add_data(p_back)
    add_model_opts(p_back)
    p_back.add_argument("--model", help="trained model.json (else train at split)")
    p_back.add_argument("--methods", help="comma list: historical,garch,risklabs")
    p_back.add_argument("--split", help="ISO date separating train and eval")
    p_back.add_argument("--var-alpha", dest="var_alpha", type=float)
    p_back.add_argument("--hist-window", dest="hist_window", type=int)
    p_back.set_defaults(func=cmd_backtest)

    p_rep = sub.add_parser("report", help="summarize emitted backtest files")
    p_rep.add_argument("--config", help="flat key = value config file")
    p_rep.add_argument("--in", dest="in_dir", help="directory with metrics.csv/curves.json")
    p_rep.add_argument("--out", help="alias for --in")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, DataFormatError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
