"""Command-line surface: exit codes, precedence, artifacts, determinism."""

import json

import numpy as np
import pytest

from mcgraph import cli
from mcgraph import dataset as ds
from mcgraph import evaluate as ev
from mcgraph.contrastive import NonFiniteLossError

FAST_CFG = "n_runs = 2\nepochs = 3\n"


@pytest.fixture
def fast_cfg(tmp_path):
    path = tmp_path / "fast.cfg"
    path.write_text(FAST_CFG, encoding="utf-8")
    return str(path)


@pytest.fixture
def ratings_csv(tmp_path):
    data = ev.restrict_users(ev.make_planted_dataset(seed=0), 12, seed=0)
    path = tmp_path / "ratings.csv"
    ds.save_ratings(data, path)
    return str(path)


class TestExitCodes:
    def test_unknown_command_is_usage(self, capsys):
        assert cli.main(["frobnicate"]) == cli.EXIT_USAGE
        capsys.readouterr()

    def test_no_command_is_usage(self, capsys):
        assert cli.main([]) == cli.EXIT_USAGE
        capsys.readouterr()

    def test_help_exits_zero(self, capsys):
        assert cli.main(["--help"]) == cli.EXIT_OK
        capsys.readouterr()

    def test_missing_data_file_is_data_error(self, capsys):
        assert cli.main(["stats", "--data", "/no/such/file.csv"]) == cli.EXIT_DATA
        assert "data error" in capsys.readouterr().err

    def test_malformed_csv_is_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("user_id,item_id,overall,c1\nu1,i1,not_a_number,3\n",
                       encoding="utf-8")
        assert cli.main(["stats", "--data", str(bad)]) == cli.EXIT_DATA
        capsys.readouterr()

    def test_unknown_config_key_is_usage(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("momentum = 0.9\n", encoding="utf-8")
        assert cli.main(["evaluate", "--config", str(cfg)]) == cli.EXIT_USAGE
        assert "usage error" in capsys.readouterr().err

    def test_missing_config_file_is_usage(self, capsys):
        assert cli.main(["evaluate", "--config", "/no/such.cfg"]) == cli.EXIT_USAGE
        capsys.readouterr()

    def test_bad_variant_flag_is_usage(self, capsys):
        assert cli.main(["evaluate", "--variant", "no_dropout"]) == cli.EXIT_USAGE
        capsys.readouterr()

    def test_bad_ts_flag_is_usage(self, capsys):
        assert cli.main(["evaluate", "--ts", "55"]) == cli.EXIT_USAGE
        capsys.readouterr()

    def test_numeric_abort_from_all_failed_runs(self, tmp_path, fast_cfg,
                                                monkeypatch, capsys):
        def broken(cfg, run_index):
            nan = float("nan")
            return ev.RunResult(run_index, run_index, nan, nan, 0.0, nan, nan,
                                failed=True)

        monkeypatch.setattr(ev, "run_single", broken)
        code = cli.main(["evaluate", "--config", fast_cfg,
                         "--out", str(tmp_path / "out")])
        assert code == cli.EXIT_NUMERIC
        assert "numeric abort" in capsys.readouterr().err

    def test_numeric_abort_from_diverged_training(self, tmp_path, fast_cfg,
                                                  monkeypatch, capsys):
        def diverge(views, cfg, seed, epochs=None):
            raise NonFiniteLossError(1, None)

        monkeypatch.setattr(cli, "train_embeddings", diverge)
        code = cli.main(["train", "--config", fast_cfg,
                         "--out", str(tmp_path / "out")])
        assert code == cli.EXIT_NUMERIC
        capsys.readouterr()


class TestConfigPrecedence:
    def test_flag_beats_config_file(self, tmp_path, fast_cfg, capsys):
        out = tmp_path / "out"
        code = cli.main(["evaluate", "--config", fast_cfg, "--runs", "1",
                         "--out", str(out)])
        assert code == cli.EXIT_OK
        report = json.loads((out / "report_full.json").read_text())
        assert len(report["mae_runs"]) == 1
        capsys.readouterr()

    def test_env_seed_is_default(self, tmp_path, fast_cfg, monkeypatch, capsys):
        monkeypatch.setenv("MCGRAPH_SEED", "9")
        out = tmp_path / "out"
        assert cli.main(["train", "--config", fast_cfg,
                         "--out", str(out)]) == cli.EXIT_OK
        assert json.loads((out / "train.json").read_text())["seed"] == 9
        capsys.readouterr()

    def test_seed_flag_beats_env(self, tmp_path, fast_cfg, monkeypatch, capsys):
        monkeypatch.setenv("MCGRAPH_SEED", "9")
        out = tmp_path / "out"
        cli.main(["train", "--config", fast_cfg, "--seed", "4",
                  "--out", str(out)])
        assert json.loads((out / "train.json").read_text())["seed"] == 4
        capsys.readouterr()

    def test_config_file_seed_beats_env(self, tmp_path, monkeypatch, capsys):
        cfg = tmp_path / "seeded.cfg"
        cfg.write_text(FAST_CFG + "seed_base = 2\n", encoding="utf-8")
        monkeypatch.setenv("MCGRAPH_SEED", "9")
        out = tmp_path / "out"
        cli.main(["train", "--config", str(cfg), "--out", str(out)])
        assert json.loads((out / "train.json").read_text())["seed"] == 2
        capsys.readouterr()

    def test_bad_env_seed_is_usage(self, fast_cfg, monkeypatch, capsys):
        monkeypatch.setenv("MCGRAPH_SEED", "lucky")
        assert cli.main(["train", "--config", fast_cfg]) == cli.EXIT_USAGE
        capsys.readouterr()

    def test_artifacts_embed_effective_config(self, tmp_path, fast_cfg, capsys):
        out = tmp_path / "out"
        cli.main(["evaluate", "--config", fast_cfg, "--runs", "1",
                  "--variant", "no_global_attention", "--out", str(out)])
        report = json.loads((out / "report_no_global_attention.json").read_text())
        assert report["config"]["n_runs"] == 1
        assert report["config"]["variant"] == "no_global_attention"
        assert report["config"]["epochs"] == 3
        capsys.readouterr()


class TestStats:
    def test_planted_stats_on_stdout(self, capsys):
        assert cli.main(["stats"]) == cli.EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert 0 < payload["sparsity"] < 1
        assert payload["num_criteria"] == 3
        assert payload["config"]["dataset_path"] == ""

    def test_csv_stats(self, ratings_csv, capsys):
        assert cli.main(["stats", "--data", ratings_csv]) == cli.EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["avg_reviews_per_user"] > 0


class TestIngest:
    def test_writes_canonical_csv_and_sidecar(self, tmp_path, ratings_csv, capsys):
        out = tmp_path / "out"
        assert cli.main(["ingest", "--data", ratings_csv,
                         "--out", str(out)]) == cli.EXIT_OK
        reloaded = ds.load_ratings(out / "ratings.csv")
        assert reloaded.records == ds.load_ratings(ratings_csv).records
        sidecar = json.loads((out / "ingest.json").read_text())
        assert sidecar["records"] == len(reloaded)
        assert sidecar["config"]["dataset_path"] == ratings_csv
        capsys.readouterr()

    def test_scale_maps_onto_one_to_five(self, tmp_path, capsys):
        raw = tmp_path / "wide.csv"
        raw.write_text("user_id,item_id,overall,c1\n"
                       "u1,i1,13,13\nu1,i2,1,1\nu2,i1,7,7\n", encoding="utf-8")
        out = tmp_path / "out"
        assert cli.main(["ingest", "--data", str(raw), "--scale", "1:13",
                         "--out", str(out)]) == cli.EXIT_OK
        data = ds.load_ratings(out / "ratings.csv")
        values = [r.overall for r in data.records]
        assert min(values) == 1.0
        assert max(values) == 5.0
        capsys.readouterr()

    def test_bad_scale_is_usage(self, ratings_csv, capsys):
        assert cli.main(["ingest", "--data", ratings_csv,
                         "--scale", "wide"]) == cli.EXIT_USAGE
        capsys.readouterr()

    def test_out_of_range_rating_is_data_error(self, tmp_path, capsys):
        raw = tmp_path / "wide.csv"
        raw.write_text("user_id,item_id,overall,c1\nu1,i1,13,13\n",
                       encoding="utf-8")
        assert cli.main(["ingest", "--data", str(raw),
                         "--scale", "1:5"]) == cli.EXIT_DATA
        capsys.readouterr()

    def test_ingest_without_data_is_usage(self, capsys):
        assert cli.main(["ingest"]) == cli.EXIT_USAGE
        capsys.readouterr()


class TestTrain:
    def test_checkpoint_loss_trace_and_sidecar(self, tmp_path, fast_cfg, capsys):
        out = tmp_path / "out"
        assert cli.main(["train", "--config", fast_cfg, "--seed", "7",
                         "--out", str(out)]) == cli.EXIT_OK
        with np.load(out / "checkpoint.npz") as stored:
            assert "x" in stored.files
        trace = (out / "loss_trace.csv").read_text().splitlines()
        assert len(trace) == 4  # header + 3 epochs
        sidecar = json.loads((out / "train.json").read_text())
        assert sidecar["seed"] == 7
        assert sidecar["epochs"] == 3
        capsys.readouterr()

    def test_repeat_run_byte_identical(self, tmp_path, fast_cfg, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        cli.main(["train", "--config", fast_cfg, "--seed", "7", "--out", str(a)])
        cli.main(["train", "--config", fast_cfg, "--seed", "7", "--out", str(b)])
        for name in ("checkpoint.npz", "loss_trace.csv", "train.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        capsys.readouterr()


class TestPredict:
    def test_predictions_and_metrics(self, tmp_path, fast_cfg, capsys):
        out = tmp_path / "out"
        assert cli.main(["predict", "--config", fast_cfg, "--seed", "0",
                         "--out", str(out)]) == cli.EXIT_OK
        lines = (out / "predictions.csv").read_text().splitlines()
        assert lines[0] == "user_id,item_id,actual,predicted"
        assert len(lines) > 1
        sidecar = json.loads((out / "predict.json").read_text())
        assert sidecar["mae"] <= sidecar["rmse"]
        capsys.readouterr()

    def test_repeat_run_byte_identical(self, tmp_path, fast_cfg, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        cli.main(["predict", "--config", fast_cfg, "--out", str(a)])
        cli.main(["predict", "--config", fast_cfg, "--out", str(b)])
        for name in ("predictions.csv", "predict.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        capsys.readouterr()


class TestEvaluate:
    def test_report_and_runs_files(self, tmp_path, fast_cfg, capsys):
        out = tmp_path / "out"
        assert cli.main(["evaluate", "--config", fast_cfg,
                         "--out", str(out)]) == cli.EXIT_OK
        report = json.loads((out / "report_full.json").read_text())
        assert len(report["mae_runs"]) == 2
        runs = (out / "runs_full.csv").read_text().splitlines()
        assert runs[0] == "variant,ts,run,mae,rmse"
        assert len(runs) == 3
        assert "D-MGAC" in capsys.readouterr().out

    def test_repeat_run_byte_identical(self, tmp_path, fast_cfg, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        cli.main(["evaluate", "--config", fast_cfg, "--out", str(a)])
        cli.main(["evaluate", "--config", fast_cfg, "--out", str(b)])
        for name in ("report_full.json", "runs_full.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        capsys.readouterr()

    def test_parallel_jobs_byte_identical(self, tmp_path, fast_cfg, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        cli.main(["evaluate", "--config", fast_cfg, "--out", str(a)])
        cli.main(["evaluate", "--config", fast_cfg, "--jobs", "2",
                  "--out", str(b)])
        assert (a / "report_full.json").read_bytes() == \
            (b / "report_full.json").read_bytes()
        capsys.readouterr()

    def test_config_echo_goes_to_stderr(self, tmp_path, fast_cfg, capsys):
        cli.main(["evaluate", "--config", fast_cfg, "--out", str(tmp_path / "o")])
        captured = capsys.readouterr()
        assert "effective config" in captured.err
        assert "effective config" not in captured.out


class TestAblate:
    def test_three_reports_and_ordering_line(self, tmp_path, fast_cfg, capsys):
        out = tmp_path / "out"
        assert cli.main(["ablate", "--config", fast_cfg, "--runs", "1",
                         "--out", str(out)]) == cli.EXIT_OK
        for variant in ev.VARIANTS:
            assert (out / f"report_{variant}.json").exists()
        runs = (out / "runs_ablation.csv").read_text().splitlines()
        assert len(runs) == 4  # header + one run per variant
        assert "ablation ordering" in capsys.readouterr().out


class TestSweep:
    def test_sensitivity_artifacts(self, tmp_path, fast_cfg, capsys):
        out = tmp_path / "out"
        code = cli.main(["sweep", "sensitivity", "--config", fast_cfg,
                         "--runs", "1", "--alphas", "0.1", "--betas", "0.5",
                         "--lambdas", "0.2,0.4", "--out", str(out)])
        assert code == cli.EXIT_OK
        lines = (out / "sensitivity.csv").read_text().splitlines()
        assert lines[0] == "alpha,beta,lambda,mae_mean,mae_std"
        assert len(lines) == 3
        sidecar = json.loads((out / "sensitivity.json").read_text())
        assert len(sidecar["points"]) == 2
        assert sidecar["points"][0]["report"]["config"]["alpha"] == 0.1
        capsys.readouterr()

    def test_dims_requires_flag(self, fast_cfg, capsys):
        assert cli.main(["sweep", "dims", "--config", fast_cfg]) == cli.EXIT_USAGE
        capsys.readouterr()

    def test_dims_artifacts(self, tmp_path, fast_cfg, capsys):
        out = tmp_path / "out"
        code = cli.main(["sweep", "dims", "--config", fast_cfg, "--runs", "1",
                         "--dims", "24,48", "--out", str(out)])
        assert code == cli.EXIT_OK
        sidecar = json.loads((out / "dims.json").read_text())
        assert sidecar["dims"] == [24, 48]
        assert len(sidecar["reports"]) == 2
        capsys.readouterr()

    def test_indivisible_dim_is_usage(self, fast_cfg, capsys):
        assert cli.main(["sweep", "dims", "--config", fast_cfg,
                         "--dims", "10"]) == cli.EXIT_USAGE
        capsys.readouterr()

    def test_criteria_artifacts(self, tmp_path, fast_cfg, capsys):
        out = tmp_path / "out"
        code = cli.main(["sweep", "criteria", "--config", fast_cfg,
                         "--runs", "1", "--counts", "1,3", "--out", str(out)])
        assert code == cli.EXIT_OK
        sidecar = json.loads((out / "criteria.json").read_text())
        assert sidecar["counts"] == [1, 3]
        configs = [r["config"]["criteria_count"] for r in sidecar["reports"]]
        assert configs == [1, 3]
        capsys.readouterr()

    def test_ts_sweep_covers_all_segments(self, tmp_path, fast_cfg, capsys):
        out = tmp_path / "out"
        code = cli.main(["sweep", "ts", "--config", fast_cfg, "--runs", "1",
                         "--out", str(out)])
        assert code == cli.EXIT_OK
        sidecar = json.loads((out / "ts.json").read_text())
        assert [r["ts_percent"] for r in sidecar["reports"]] == [40, 60, 80, 100]
        runs = (out / "runs_ts.csv").read_text().splitlines()
        assert len(runs) == 5
        capsys.readouterr()
