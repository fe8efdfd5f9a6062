"""Harness: config handling, matrix runs, caching, reproducibility, CLI."""

import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from napinn.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, main
from napinn.harness import (
    Cell,
    ConfigError,
    ExperimentConfig,
    clean_dataset,
    emit_plot_data,
    field_cache_key,
    load_or_generate_field,
    matrix_cells,
    run_cell,
    run_matrix,
    sweep_rejection_cost,
)
from napinn.pdes import allen_cahn_reference


def micro_config(**kw):
    base = dict(
        benchmarks=["allen_cahn"],
        methods=["napinn", "vanilla"],
        ratios=[0.10],
        seeds=[0, 1],
        scale="desk",
        solver_grid={"allen_cahn": 24},
        snapshots=3,
        eval_n=15,
        schedule={"warmup": 3, "ebm_init": 3, "joint": 3,
                  "collocation_batch": 32, "data_batch": 64, "ebm_batch": 64,
                  "collocation_n": 8, "log_every": 1},
    )
    base.update(kw)
    return ExperimentConfig.from_dict(base)


class TestConfig:
    def test_from_dict_applies_preset_then_overrides(self):
        cfg = micro_config()
        assert cfg.solver_grid["allen_cahn"] == 24
        assert cfg.solver_grid["burgers"] == 512  # desk preset untouched
        assert cfg.schedule.warmup == 3

    def test_full_scale_preset(self):
        cfg = ExperimentConfig(benchmarks=["burgers"], methods=["vanilla"],
                               ratios=[0.05], seeds=[], scale="full")
        assert cfg.solver_grid["burgers"] == 512
        assert cfg.seeds == list(range(10))
        assert cfg.schedule.joint == 25000

    def test_unknown_method_rejected(self):
        with pytest.raises(ConfigError):
            micro_config(methods=["magic"])

    def test_unknown_benchmark_rejected(self):
        with pytest.raises((ConfigError, ValueError)):
            micro_config(benchmarks=["helmholtz"])

    def test_bad_ratio_rejected(self):
        with pytest.raises(ConfigError):
            micro_config(ratios=[1.5])

    def test_yaml_round_trip(self, tmp_path):
        cfg = micro_config()
        path = tmp_path / "c.yaml"
        with open(path, "w") as fh:
            yaml.safe_dump(cfg.to_dict(), fh)
        back = ExperimentConfig.from_yaml(path)
        assert back.to_dict() == cfg.to_dict()

    def test_echo_round_trip(self, tmp_path):
        cfg = micro_config()
        cfg.echo(tmp_path)
        back = ExperimentConfig.from_yaml(tmp_path / "config.yaml")
        assert back.to_dict() == cfg.to_dict()


class TestFieldCache:
    def test_cache_key_ignores_seed_for_deterministic_benchmarks(self):
        assert field_cache_key("allen_cahn", 24, 3, 0) == \
            field_cache_key("allen_cahn", 24, 3, 7)
        assert field_cache_key("burgers", 64, 3, 0) != \
            field_cache_key("burgers", 64, 3, 7)

    def test_cached_equals_regenerated(self, tmp_path):
        a = load_or_generate_field("allen_cahn", 24, 3, 0, tmp_path)
        b = load_or_generate_field("allen_cahn", 24, 3, 0, tmp_path)  # from cache
        assert np.array_equal(a.values, b.values)
        direct = allen_cahn_reference(24, 3)
        assert np.array_equal(a.values, direct.values)


class TestCleanDataset:
    def test_observed_equals_clean(self):
        field = allen_cahn_reference(24, 3)
        ds = clean_dataset(field, sensors_n=15)
        assert np.array_equal(ds.observed, ds.clean)
        assert not ds.is_outlier.any()
        assert ds.n == 225 * 3


class TestMatrix:
    def test_cell_count(self):
        cfg = micro_config()
        cells = matrix_cells(cfg)
        assert len(cells) == 2 * 1 * 2  # methods x ratios x seeds

    def test_clean_reference_adds_cells(self):
        cfg = micro_config(clean_reference=True)
        cells = matrix_cells(cfg)
        assert len(cells) == 4 + 2
        assert sum(1 for c in cells if c.ratio is None) == 2

    def test_run_matrix_layout_and_summary(self, tmp_path):
        cfg = micro_config(seeds=[0, 1], methods=["napinn", "vanilla"])
        reports, failures = run_matrix(cfg, tmp_path)
        assert not failures
        assert len(reports) == 4
        run_dir = tmp_path / "allen_cahn" / "napinn" / "0.1" / "0"
        for name in ("metrics.json", "trace.csv", "dataset.csv",
                     "checkpoint.npz", "density.csv", "gate.csv"):
            assert (run_dir / name).exists(), name
        vanilla_dir = tmp_path / "allen_cahn" / "vanilla" / "0.1" / "0"
        assert not (vanilla_dir / "gate.csv").exists()
        assert (tmp_path / "summary.csv").exists()
        assert (tmp_path / "config.yaml").exists()
        rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
        methods = {r["method"] for r in rows}
        assert {"napinn", "vanilla", "improvement_vs_best_baseline"} <= methods

    def test_bit_identical_reruns(self, tmp_path):
        cfg = micro_config(seeds=[0], methods=["napinn"])
        run_matrix(cfg, tmp_path / "a")
        run_matrix(cfg, tmp_path / "b")
        ma = (tmp_path / "a/allen_cahn/napinn/0.1/0/metrics.json").read_text()
        mb = (tmp_path / "b/allen_cahn/napinn/0.1/0/metrics.json").read_text()
        assert ma == mb

    def test_failure_recorded_and_matrix_continues(self, tmp_path):
        # burgers at a 24-point grid trips the cell-Reynolds guard
        cfg = micro_config(benchmarks=["allen_cahn", "burgers"],
                           methods=["vanilla"], seeds=[0],
                           solver_grid={"allen_cahn": 24, "burgers": 24})
        reports, failures = run_matrix(cfg, tmp_path)
        assert len(failures) == 1
        assert failures[0][0].benchmark == "burgers"
        assert len(reports) == 1
        fail_file = tmp_path / "burgers" / "vanilla" / "0.1" / "0" / "FAILED.txt"
        assert fail_file.exists()
        assert "CflError" in fail_file.read_text()

    def test_parallel_jobs_match_serial(self, tmp_path):
        cfg = micro_config(seeds=[0, 1], methods=["vanilla"])
        run_matrix(cfg, tmp_path / "serial", jobs=1)
        run_matrix(cfg, tmp_path / "par", jobs=2)
        for seed in (0, 1):
            a = (tmp_path / f"serial/allen_cahn/vanilla/0.1/{seed}/metrics.json").read_text()
            b = (tmp_path / f"par/allen_cahn/vanilla/0.1/{seed}/metrics.json").read_text()
            assert a == b

    def test_seed_offset_changes_runs(self, tmp_path):
        cfg_a = micro_config(seeds=[0], methods=["vanilla"])
        cfg_b = micro_config(seeds=[0], methods=["vanilla"], seed_offset=100)
        run_matrix(cfg_a, tmp_path / "a")
        run_matrix(cfg_b, tmp_path / "b")
        ja = json.loads((tmp_path / "a/allen_cahn/vanilla/0.1/0/metrics.json").read_text())
        jb = json.loads((tmp_path / "b/allen_cahn/vanilla/0.1/0/metrics.json").read_text())
        assert ja["rmse"] != jb["rmse"]


class TestSweep:
    def test_sweep_rows_and_shared_seeds(self, tmp_path):
        cfg = micro_config(seeds=[0], lambda_sweep=[0.2, 0.5])
        rows = sweep_rejection_cost(cfg, tmp_path)
        assert len(rows) == 2
        assert [r[0] for r in rows] == [0.2, 0.5]
        table = list(csv.DictReader(open(tmp_path / "sweep.csv")))
        assert [t["lambda_rej"] for t in table] == ["0.2", "0.5"]
        assert all("rejected_fraction" in t for t in table)
        assert (tmp_path / "lambda_0.2/allen_cahn/napinn/0.15/0").is_dir()

    def test_default_sweep_grid(self):
        cfg = micro_config()
        assert cfg.lambda_sweep == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8,
                                    0.9, 1.0]
        assert 0.5 in cfg.lambda_sweep


class TestPlotData:
    def test_empty_dir_is_an_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            emit_plot_data(tmp_path)

    def test_robustness_and_trace_files(self, tmp_path):
        cfg = micro_config(seeds=[0], methods=["napinn", "vanilla"])
        run_matrix(cfg, tmp_path)
        written = emit_plot_data(tmp_path)
        names = {p.name for p in written}
        assert "fig_robustness_allen_cahn.csv" in names
        assert "fig_gate_trace_allen_cahn.csv" in names
        rows = list(csv.DictReader(open(tmp_path / "fig_robustness_allen_cahn.csv")))
        assert {r["method"] for r in rows} == {"napinn", "vanilla"}
        trace = list(csv.DictReader(open(tmp_path / "fig_gate_trace_allen_cahn.csv")))
        assert {"a", "tau"} <= set(trace[0].keys())


class TestCli:
    def _write_cfg(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        with open(path, "w") as fh:
            yaml.safe_dump(micro_config(seeds=[0], methods=["vanilla"]).to_dict(),
                           fh)
        return path

    def test_matrix_exit_ok(self, tmp_path):
        cfg = self._write_cfg(tmp_path)
        code = main(["matrix", "--config", str(cfg), "--out",
                     str(tmp_path / "out")])
        assert code == EXIT_OK

    def test_train_single_cell(self, tmp_path):
        cfg = self._write_cfg(tmp_path)
        code = main(["train", "--config", str(cfg), "--out",
                     str(tmp_path / "out"), "--benchmark", "allen_cahn",
                     "--method", "vanilla", "--ratio", "0.1", "--seed", "0"])
        assert code == EXIT_OK
        assert (tmp_path / "out/allen_cahn/vanilla/0.1/0/metrics.json").exists()

    def test_generate(self, tmp_path):
        cfg = self._write_cfg(tmp_path)
        code = main(["generate", "--config", str(cfg), "--out",
                     str(tmp_path / "out")])
        assert code == EXIT_OK
        assert list((tmp_path / "out" / "cache").glob("allen_cahn_*.npz"))

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        cfg = micro_config(seeds=[0], methods=["vanilla"]).to_dict()
        cfg["methods"] = ["wizardry"]
        with open(bad, "w") as fh:
            yaml.safe_dump(cfg, fh)
        code = main(["matrix", "--config", str(bad), "--out",
                     str(tmp_path / "out")])
        assert code == EXIT_CONFIG

    def test_partial_failure_exit_code(self, tmp_path):
        cfg_dict = micro_config(benchmarks=["allen_cahn", "burgers"],
                                methods=["vanilla"], seeds=[0],
                                solver_grid={"allen_cahn": 24, "burgers": 24}).to_dict()
        path = tmp_path / "cfg.yaml"
        with open(path, "w") as fh:
            yaml.safe_dump(cfg_dict, fh)
        code = main(["matrix", "--config", str(path), "--out",
                     str(tmp_path / "out")])
        assert code == EXIT_PARTIAL
