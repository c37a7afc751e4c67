"""Config parsing, experiment orchestration, artifact schemas, exit codes."""

import math

import numpy as np
import pytest

from superhedge.cli import (
    EXIT_ERROR,
    EXIT_INFINITE_PRICE,
    EXIT_NO_ARBITRAGE,
    EXIT_OK,
    ConfigError,
    ExperimentConfig,
    format_stats_csv,
    main,
    parse_config,
    render_config,
    run_experiment,
)
from superhedge.simulation import SimStats

SMALL = "n_paths = 2000\nstrikes = 100\nseed = 11\n"


class TestParseConfig:
    def test_empty_gives_defaults(self):
        assert parse_config("") == ExperimentConfig()

    def test_single_strike(self):
        cfg = parse_config("strikes = 100\n")
        assert cfg.strikes == (100.0,)

    def test_comments_and_blanks_ignored(self):
        cfg = parse_config("# a comment\n\nseed = 3\n")
        assert cfg.seed == 3

    def test_unknown_key_rejected_with_line(self):
        with pytest.raises(ConfigError, match=r"line 2.*'strike'"):
            parse_config("seed = 1\nstrike = 100\n")

    def test_malformed_value_names_key(self):
        with pytest.raises(ConfigError, match=r"line 1.*'n_paths'"):
            parse_config("n_paths = many\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("just words\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("seed = 1\nseed = 2\n")

    def test_zero_paths_fails_validation(self):
        with pytest.raises(ConfigError, match="n_paths"):
            parse_config("n_paths = 0\n")

    def test_empty_strikes_rejected(self):
        with pytest.raises(ConfigError, match="strikes"):
            parse_config("strikes =\n")

    def test_bad_payoff_tag(self):
        with pytest.raises(ConfigError, match="payoff"):
            parse_config("payoff = lookback\n")

    def test_bounds_rewrite_draw_ranges(self):
        cfg = parse_config("k_down = 1.1\nk_up = 1.4\n")
        assert (cfg.m_lo, cfg.m_hi) == (1.1, 1.4)
        assert (cfg.spr_lo, cfg.spr_hi) == (0.0, 0.0)
        model = cfg.build_model()
        assert model.steps[0].k_down == 1.1

    def test_bounds_need_each_other(self):
        with pytest.raises(ConfigError, match="together"):
            parse_config("k_down = 1.1\n")

    def test_inconsistent_bounds_with_ranges(self):
        text = "k_down = 0.8\nk_up = 1.4\nm_lo = 0.7\nm_hi = 1.0\n"
        text += "spr_lo = 0.0\nspr_hi = 0.4\n"
        with pytest.raises(ConfigError, match="inconsistent"):
            parse_config(text)

    def test_roundtrip_defaults(self):
        cfg = ExperimentConfig()
        assert parse_config(render_config(cfg)) == cfg

    def test_roundtrip_custom(self):
        cfg = ExperimentConfig(
            s_prev=85.5,
            horizon=3,
            strikes=(42.0, 66.6),
            n_paths=123,
            seed=99,
            payoff="custom-pwl",
            payoff_breakpoints=(50.0, 100.0),
            payoff_values=(0.0, 10.0),
            payoff_left_slope=-0.5,
            payoff_right_slope=2.0,
            dump_paths=True,
            histograms=True,
            hist_bins=17,
            straddle_to_ask=False,
        )
        assert parse_config(render_config(cfg)) == cfg

    def test_custom_payoff_needs_breakpoints(self):
        with pytest.raises(ConfigError, match="payoff_breakpoints"):
            parse_config("payoff = custom-pwl\n")


class TestRunExperiment:
    def test_small_run_writes_table(self, tmp_path):
        cfg = parse_config(SMALL)
        code = run_experiment(cfg, tmp_path)
        assert code == EXIT_OK
        text = (tmp_path / "stats.txt").read_text()
        for label in SimStats.ROW_LABELS:
            assert label in text
        csv = (tmp_path / "stats.csv").read_text().strip().splitlines()
        assert len(csv) == 16
        assert [line.split(",")[0] for line in csv] == list(SimStats.ROW_LABELS)
        assert (tmp_path / "effective_config.txt").exists()

    def test_aip_failure_exit_code(self, tmp_path, capsys):
        cfg = parse_config("k_down = 1.1\nk_up = 1.4\n" + SMALL)
        code = run_experiment(cfg, tmp_path)
        assert code == EXIT_NO_ARBITRAGE
        err = capsys.readouterr().err
        assert "step 0" in err and "1.1" in err

    def test_clamp_flag_distinct_code(self, tmp_path, capsys):
        cfg = parse_config(
            "k_down = 1.1\nk_up = 1.4\nclamp_infinite_price = true\n" + SMALL
        )
        code = run_experiment(cfg, tmp_path)
        assert code == EXIT_INFINITE_PRICE
        assert "k_down <= 1 <= k_up" in capsys.readouterr().err

    def test_determinism_byte_identical(self, tmp_path):
        cfg = parse_config(SMALL + "dump_paths = true\nhistograms = true\n")
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        for name in (
            "stats.csv",
            "paths_K100.csv",
            "hist_K100_eps_R.csv",
            "effective_config.txt",
        ):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()

    def test_histogram_schema(self, tmp_path):
        cfg = parse_config(SMALL + "histograms = true\nhist_bins = 25\n")
        run_experiment(cfg, tmp_path)
        for stat in ("S_0", "S_1", "S_2", "eps_R"):
            lines = (
                (tmp_path / f"hist_K100_{stat}.csv").read_text().strip().splitlines()
            )
            assert lines[0] == "bin_lo,bin_hi,count"
            assert len(lines) == 26
            counts = [int(line.split(",")[2]) for line in lines[1:]]
            assert sum(counts) == 2000
            lows = [float(line.split(",")[0]) for line in lines[1:]]
            assert lows == sorted(lows)

    def test_dump_schema(self, tmp_path):
        cfg = parse_config(SMALL + "dump_paths = true\n")
        run_experiment(cfg, tmp_path)
        lines = (tmp_path / "paths_K100.csv").read_text().strip().splitlines()
        assert lines[0] == (
            "path_id,S_0,S_1,S_2,bid_1,ask_1,theta_0,theta_1,V_0,V_1,V_2,eps_r"
        )
        assert len(lines) == 2001
        eps = np.array([float(line.split(",")[-1]) for line in lines[1:]])
        assert eps.min() >= -1e-9

    def test_export_strategy(self, tmp_path):
        cfg = parse_config(SMALL + "export_strategy = true\n")
        run_experiment(cfg, tmp_path)
        for t in (0, 1):
            lines = (
                (tmp_path / f"strategy_K100_t{t}.csv").read_text().strip().splitlines()
            )
            assert lines[0] == "s,theta"
            assert len(lines) > 100

    def test_put_payoff_runs(self, tmp_path):
        cfg = parse_config(SMALL + "payoff = put\n")
        assert run_experiment(cfg, tmp_path) == EXIT_OK
        csv = (tmp_path / "stats.csv").read_text()
        assert "min eps_R" in csv

    def test_custom_payoff_single_column(self, tmp_path):
        cfg = parse_config(
            SMALL
            + "payoff = custom-pwl\n"
            + "payoff_breakpoints = 80, 120\n"
            + "payoff_values = 0, 0\n"
            + "payoff_left_slope = -1\n"
            + "payoff_right_slope = 1\n"
        )
        assert run_experiment(cfg, tmp_path) == EXIT_OK
        first = (tmp_path / "stats.csv").read_text().splitlines()[0]
        assert first.split(",")[1] == "nan"
        assert len(first.split(",")) == 2  # label + one column

    def test_asian_payoff_runs(self, tmp_path):
        cfg = parse_config("n_paths = 200\nstrikes = 100\npayoff = asian-call\n")
        assert run_experiment(cfg, tmp_path) == EXIT_OK
        csv = (tmp_path / "stats.csv").read_text().splitlines()
        eps_min_row = [line for line in csv if line.startswith("min eps_R")][0]
        assert float(eps_min_row.split(",")[1]) >= -1e-9

    def test_horizon_one(self, tmp_path):
        cfg = parse_config("n_paths = 500\nstrikes = 90\nhorizon = 1\n")
        assert run_experiment(cfg, tmp_path) == EXIT_OK
        csv = (tmp_path / "stats.csv").read_text().splitlines()
        s2_row = [line for line in csv if line.startswith("E(S2)")][0]
        assert s2_row.split(",")[1] == "nan"


class TestMain:
    def test_cli_flags_override(self, tmp_path):
        cfg_file = tmp_path / "cfg.txt"
        cfg_file.write_text("n_paths = 999999\nstrikes = 75, 100\n")
        out = tmp_path / "out"
        code = main(
            [
                "--config",
                str(cfg_file),
                "--paths",
                "1500",
                "--strikes",
                "100",
                "--seed",
                "3",
                "--out",
                str(out),
            ]
        )
        assert code == EXIT_OK
        echoed = (out / "effective_config.txt").read_text()
        assert "n_paths = 1500" in echoed
        assert "seed = 3" in echoed
        assert "strikes = 100.0" in echoed

    def test_missing_config_file(self, tmp_path):
        code = main(["--config", str(tmp_path / "nope.txt")])
        assert code == EXIT_ERROR

    def test_bad_config_content(self, tmp_path):
        f = tmp_path / "cfg.txt"
        f.write_text("bogus_key = 1\n")
        assert main(["--config", str(f), "--out", str(tmp_path / "o")]) == EXIT_ERROR


class TestFormatting:
    def test_csv_full_precision(self):
        stats = SimStats(
            strike=100.0,
            n_paths=1,
            mean_s0=1 / 3,
            mean_s1=math.nan,
            mean_s2=0.0,
            mean_v0=0.0,
            max_v0=0.0,
            mean_v0_over_sprev=0.0,
            mean_v0_over_s0=0.0,
            min_v0_over_s0=0.0,
            max_v0_over_s0=0.0,
            mean_eps=0.0,
            std_eps=0.0,
            min_eps=0.0,
            max_eps=0.0,
            mean_theta0_frac=0.0,
            mean_theta1_frac=0.0,
        )
        out = format_stats_csv([stats])
        assert "0.3333333333333333" in out
        assert out.count("\n") == 16
