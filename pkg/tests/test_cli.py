"""CLI subcommands: exit codes, config handling, reproducibility."""

import json
from pathlib import Path

import pytest

from risklabs.cli import EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main


def run_synth(out_dir, seed=7, days=400, extra=()):
    return main(
        [
            "synth", "--seed", str(seed), "--days", str(days), "--out", str(out_dir),
            "--omega", "0.25", "--alpha", "0.05", "--beta", "0.70",
            "--news-rate", "0.3", "--shock-factor", "1.5", *extra,
        ]
    )


def read_all(out_dir):
    return {p.name: p.read_bytes() for p in sorted(Path(out_dir).iterdir())}


class TestSynthCommand:
    def test_writes_three_files(self, tmp_path):
        assert run_synth(tmp_path / "a") == EXIT_OK
        names = {p.name for p in (tmp_path / "a").iterdir()}
        assert names == {"prices.csv", "news.jsonl", "events.jsonl"}

    def test_byte_identical_across_runs(self, tmp_path):
        run_synth(tmp_path / "a")
        run_synth(tmp_path / "b")
        assert read_all(tmp_path / "a") == read_all(tmp_path / "b")

    def test_missing_seed_is_usage_error(self, tmp_path, capsys):
        code = main(["synth", "--days", "200", "--out", str(tmp_path)])
        assert code == EXIT_USAGE
        assert "seed" in capsys.readouterr().err

    def test_regime_flags_must_pair(self, tmp_path):
        code = main(
            ["synth", "--seed", "1", "--out", str(tmp_path), "--regime-day", "100"]
        )
        assert code == EXIT_USAGE

    def test_unknown_subcommand_usage(self):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_regime_shift_output_trips_window_probe(self, tmp_path):
        # probe oracle: generated vol jump must shrink the dynamic window
        import numpy as np

        from risklabs.data import compute_returns, load_prices
        from risklabs.model import WindowConfig, select_window

        code = main(
            [
                "synth", "--seed", "3", "--days", "400", "--out", str(tmp_path),
                "--omega", "0.05", "--alpha", "0.05", "--beta", "0.5",
                "--regime-day", "360", "--regime-mult", "9",
            ]
        )
        assert code == EXIT_OK
        series = load_prices(tmp_path / "prices.csv")["SYN"]
        returns = compute_returns(series).returns
        cfg = WindowConfig(w_min=120, w_max=720, shift_ratio_threshold=1.5)
        # probe right at the end: last 30 days sit in the high-vol regime
        assert select_window(returns, cfg, previous_window=720) == cfg.w_min
        # and before the shift the window would not shrink
        assert select_window(returns[:350], cfg, previous_window=690) == 720


class TestConfigFile:
    def test_config_file_supplies_options(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(
            "seed = 7\ndays = 400\nomega = 0.25\nalpha = 0.05\nbeta = 0.70\n"
            "news_rate = 0.3\nshock_factor = 1.5\n"
            f"out = {tmp_path / 'a'}\n"
        )
        assert main(["synth", "--config", str(cfg)]) == EXIT_OK
        assert (tmp_path / "a" / "prices.csv").exists()

    def test_flag_overrides_config(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 7\ndays = 400\n")
        main(
            ["synth", "--config", str(cfg), "--out", str(tmp_path / "a")]
        )
        main(
            ["synth", "--config", str(cfg), "--seed", "8", "--out", str(tmp_path / "b")]
        )
        assert read_all(tmp_path / "a") != read_all(tmp_path / "b")

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("seed = 7\nwibble = 3\n")
        assert main(["synth", "--config", str(cfg)]) == EXIT_USAGE
        assert "wibble" in capsys.readouterr().err

    def test_comments_and_blanks_ignored(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\n\nseed = 7  # trailing\ndays = 400\n")
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "a")]) == EXIT_OK


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert run_synth(out, seed=11, days=420) == EXIT_OK
    return out


def fit_args(dataset, out, seed=5, epochs=8):
    return [
        "fit",
        "--prices", str(dataset / "prices.csv"),
        "--news", str(dataset / "news.jsonl"),
        "--events", str(dataset / "events.jsonl"),
        "--out", str(out),
        "--seed", str(seed),
        "--epochs", str(epochs),
        "--hidden", "4", "--head-hidden", "5", "--fused-dim", "3",
    ]


class TestFitCommand:
    def test_fit_writes_model_and_trace(self, dataset, tmp_path):
        assert main(fit_args(dataset, tmp_path)) == EXIT_OK
        assert (tmp_path / "model.json").exists()
        trace = (tmp_path / "loss_trace.csv").read_text().splitlines()
        assert trace[0] == "epoch,loss"
        assert len(trace) == 9

    def test_refit_same_seed_identical_model(self, dataset, tmp_path):
        main(fit_args(dataset, tmp_path / "a"))
        main(fit_args(dataset, tmp_path / "b"))
        assert (tmp_path / "a" / "model.json").read_bytes() == (
            tmp_path / "b" / "model.json"
        ).read_bytes()

    def test_missing_seed_usage(self, dataset, tmp_path):
        args = fit_args(dataset, tmp_path)
        i = args.index("--seed")
        del args[i : i + 2]
        assert main(args) == EXIT_USAGE

    def test_missing_prices_file_is_io_error(self, tmp_path, capsys):
        code = main(
            [
                "fit", "--prices", str(tmp_path / "nope.csv"),
                "--out", str(tmp_path), "--seed", "1",
            ]
        )
        assert code == EXIT_IO

    def test_malformed_prices_is_io_error(self, tmp_path):
        bad = tmp_path / "prices.csv"
        bad.write_text("date,ticker,close\n2021-01-04,T,abc\n")
        code = main(
            ["fit", "--prices", str(bad), "--out", str(tmp_path), "--seed", "1"]
        )
        assert code == EXIT_IO

    def test_numeric_abort_exit_code(self, dataset, tmp_path, capsys):
        args = fit_args(dataset, tmp_path) + ["--lr", "1e200"]
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            code = main(args)
        assert code == EXIT_NUMERIC
        assert "numeric" in capsys.readouterr().err.lower()


def backtest_args(dataset, out, methods="historical,garch", split="2016-02-01", extra=()):
    return [
        "backtest",
        "--prices", str(dataset / "prices.csv"),
        "--news", str(dataset / "news.jsonl"),
        "--events", str(dataset / "events.jsonl"),
        "--out", str(out),
        "--methods", methods,
        "--split", split,
        "--hist-window", "120",
        *extra,
    ]


class TestBacktestCommand:
    def test_three_methods_in_metrics(self, dataset, tmp_path):
        code = main(
            backtest_args(
                dataset, tmp_path, methods="historical,garch,risklabs",
                extra=(
                    "--seed", "3", "--epochs", "8",
                    "--hidden", "4", "--head-hidden", "5", "--fused-dim", "3",
                ),
            )
        )
        assert code == EXIT_OK
        text = (tmp_path / "metrics.csv").read_text()
        for name in ("historical", "garch", "risklabs"):
            assert name in text
        curves = json.loads((tmp_path / "curves.json").read_text())
        assert {c["method"] for c in curves} == {"historical", "garch", "risklabs"}

    def test_split_after_data_end_usage_error(self, dataset, tmp_path, capsys):
        code = main(backtest_args(dataset, tmp_path, split="2030-01-01"))
        assert code == EXIT_USAGE
        assert "split" in capsys.readouterr().err

    def test_unknown_method_usage_error(self, dataset, tmp_path):
        assert main(backtest_args(dataset, tmp_path, methods="voodoo")) == EXIT_USAGE

    def test_risklabs_without_seed_or_model_usage_error(self, dataset, tmp_path):
        assert main(backtest_args(dataset, tmp_path, methods="risklabs")) == EXIT_USAGE

    def test_byte_identical_backtest(self, dataset, tmp_path):
        a = backtest_args(dataset, tmp_path / "a")
        b = backtest_args(dataset, tmp_path / "b")
        assert main(a) == EXIT_OK and main(b) == EXIT_OK
        assert read_all(tmp_path / "a") == read_all(tmp_path / "b")

    def test_model_file_reused(self, dataset, tmp_path):
        assert main(fit_args(dataset, tmp_path / "m")) == EXIT_OK
        code = main(
            backtest_args(
                dataset, tmp_path / "bt", methods="risklabs",
                extra=("--model", str(tmp_path / "m" / "model.json")),
            )
        )
        assert code == EXIT_OK


class TestReportCommand:
    def test_report_summarizes_backtest(self, dataset, tmp_path, capsys):
        main(backtest_args(dataset, tmp_path))
        code = main(["report", "--in", str(tmp_path)])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "historical" in out and "garch" in out
        summary = (tmp_path / "summary.txt").read_text()
        assert "kupiec" in summary
        assert "exceedance" in summary

    def test_report_missing_dir_io_error(self, tmp_path):
        assert main(["report", "--in", str(tmp_path / "nothing")]) == EXIT_IO
