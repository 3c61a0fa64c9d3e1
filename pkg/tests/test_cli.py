import json

import numpy as np
import pytest

from pnpkit import ConfigError, Trace, write_trace
from pnpkit.cli import (
    ExperimentConfig,
    builtin_image,
    main,
    render_traces_svg,
    validate_config,
)


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def small_deblur_config(out_dir, max_iter=40):
    return {
        "task": "deblur",
        "image": {"builtin": "shapes", "size": 32},
        "operator": {"kind": "blur", "kernel": {"builtin": "uniform", "size": 5}},
        "noise": {"percent": 3.0},
        "denoiser": {"kind": "tv", "c": 1.0},
        "solver": {"algo": "pnp-pgd", "step": 1.0, "sigma": 0.06,
                   "max_iter": max_iter, "tol": 1e-9},
        "seed": 0,
        "output": out_dir,
    }


class TestConfigValidation:
    def test_unknown_top_level_key_rejected(self, tmp_path):
        doc = small_deblur_config(str(tmp_path / "out"))
        doc["typo_key"] = 1
        with pytest.raises(ConfigError):
            validate_config(doc)

    def test_unknown_nested_key_rejected(self, tmp_path):
        doc = small_deblur_config(str(tmp_path / "out"))
        doc["solver"]["stepp"] = 0.1
        with pytest.raises(ConfigError):
            validate_config(doc)

    def test_bad_task_rejected(self):
        with pytest.raises(ConfigError):
            validate_config({"task": "mystery"})

    def test_missing_file_rejected(self, tmp_path):
        doc = small_deblur_config(str(tmp_path / "out"))
        doc["image"] = {"path": str(tmp_path / "nope.pgm")}
        with pytest.raises(ConfigError):
            validate_config(doc)

    def test_serializable_roundtrip(self, tmp_path):
        doc = small_deblur_config(str(tmp_path / "out"))
        cfg = ExperimentConfig.from_dict(doc)
        assert json.loads(cfg.to_json()) == cfg.to_dict()
        assert ExperimentConfig.from_dict(cfg.to_dict()).task == "deblur"


class TestBuiltinImages:
    def test_shapes_in_unit_range(self):
        img = builtin_image("shapes", 64)
        assert img.shape == (64, 64)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_ramp_is_smooth(self):
        img = builtin_image("ramp", 64)
        assert np.max(np.abs(np.diff(img, axis=1))) < 0.1

    def test_deterministic(self):
        np.testing.assert_array_equal(builtin_image("shapes", 32),
                                      builtin_image("shapes", 32))


class TestSolveCommand:
    def test_writes_outputs_and_improves_psnr(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path, small_deblur_config(str(out)))
        assert main(["solve", "--config", cfg]) == 0
        for name in ("recon.raw", "recon.pgm", "trace.csv", "summary.json"):
            assert (out / name).exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["final_psnr"] > summary["input_psnr"]
        assert summary["stop_reason"] in ("tolerance", "max_iter")

    def test_invalid_algo_exit_2_lists_algos(self, tmp_path, capsys):
        doc = small_deblur_config(str(tmp_path / "out"))
        doc["solver"]["algo"] = "warp-drive"
        cfg = write_config(tmp_path, doc)
        assert main(["solve", "--config", cfg]) == 2
        err = capsys.readouterr().err
        assert "pnp-pgd" in err and "admm" in err

    def test_byte_identical_reruns(self, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        doc = small_deblur_config("unused", max_iter=15)
        cfg = write_config(tmp_path, doc)
        assert main(["solve", "--config", cfg, "--out", str(out_a), "--seed", "7"]) == 0
        assert main(["solve", "--config", cfg, "--out", str(out_b), "--seed", "7"]) == 0
        for name in ("recon.raw", "recon.pgm", "trace.csv", "summary.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_task_mismatch_exit_2(self, tmp_path):
        cfg = write_config(tmp_path, small_deblur_config(str(tmp_path / "out")))
        assert main(["compare", "--config", cfg]) == 2

    def test_inpaint_task(self, tmp_path):
        out = tmp_path / "out"
        doc = {
            "task": "inpaint",
            "image": {"builtin": "ramp", "size": 32},
            "operator": {"kind": "mask", "density": 0.6},
            "noise": {"sigma": 0.01},
            "denoiser": {"kind": "tv", "c": 1.0},
            "solver": {"algo": "pnp-pgd", "step": 1.0, "sigma": 0.08,
                       "max_iter": 60, "tol": 1e-9},
            "output": str(out),
        }
        cfg = write_config(tmp_path, doc)
        assert main(["solve", "--config", cfg]) == 0


class TestCompareCommand:
    def compare_config(self, out):
        return {
            "task": "compare",
            "images": [{"builtin": "shapes", "size": 32}],
            "operator": {"kind": "blur", "kernel": {"builtin": "uniform", "size": 5}},
            "noise": {"percent": 3.0},
            "denoiser": {"kind": "gs", "kernel_sigma": 1.5, "floor": 0.15,
                         "weight": 0.7},
            "solvers": [
                {"algo": "pnp-pgd", "step": 1.0, "max_iter": 300, "tol": 1e-9},
                {"algo": "pnp-drsdiff", "step": 1.0, "max_iter": 300, "tol": 1e-9},
                {"algo": "gs-pnp", "lam": 0.7, "tau": 1.0, "step": 1.0,
                 "max_iter": 300, "tol": 1e-9},
            ],
            "seed": 0,
            "output": out,
        }

    def test_compare_outputs(self, tmp_path):
        out = tmp_path / "cmp"
        cfg = write_config(tmp_path, self.compare_config(str(out)))
        assert main(["compare", "--config", cfg]) == 0
        table = (out / "compare.csv").read_text().splitlines()
        assert table[0] == "solver,image,final_psnr,min_residual,residual_slope,converged"
        assert len(table) == 4
        for line in table[1:]:
            assert line.endswith("true")
        assert len(list(out.glob("trace_*.csv"))) == 3

    def test_empty_solver_list_exit_2(self, tmp_path):
        doc = self.compare_config(str(tmp_path / "cmp"))
        doc["solvers"] = []
        cfg = write_config(tmp_path, doc)
        assert main(["compare", "--config", cfg]) == 2

    def test_worker_fanout_matches_sequential(self, tmp_path, monkeypatch):
        out_seq = tmp_path / "seq"
        out_par = tmp_path / "par"
        doc = self.compare_config("unused")
        cfg = write_config(tmp_path, doc)
        monkeypatch.delenv("PNPKIT_THREADS", raising=False)
        assert main(["compare", "--config", cfg, "--out", str(out_seq)]) == 0
        monkeypatch.setenv("PNPKIT_THREADS", "3")
        assert main(["compare", "--config", cfg, "--out", str(out_par)]) == 0
        assert (out_seq / "compare.csv").read_bytes() == (out_par / "compare.csv").read_bytes()

    def test_hqs_baseline_recorded(self, tmp_path):
        out = tmp_path / "cmp"
        doc = self.compare_config(str(out))
        doc["denoiser"] = {"kind": "tv", "c": 1.0}
        doc["solvers"] = [
            {"algo": "pnp-pgd", "step": 1.0, "sigma": 0.06, "max_iter": 60, "tol": 1e-9},
            {"algo": "hqs", "rho": 1.0, "sigma": 0.2, "max_iter": 60, "tol": 0.0,
             "sigma_schedule": list(np.geomspace(0.2, 0.02, 60))},
        ]
        cfg = write_config(tmp_path, doc)
        assert main(["compare", "--config", cfg]) == 0
        rows = (out / "compare.csv").read_text().splitlines()[1:]
        assert any(r.startswith("hqs,") for r in rows)


class TestSweepCommand:
    def test_default_sweep_monotone(self, tmp_path):
        out = tmp_path / "sweep"
        cfg = write_config(tmp_path, {"task": "sweep", "output": str(out), "seed": 0})
        assert main(["sweep", "--config", cfg, "--assert"]) == 0
        rows = (out / "sweep.csv").read_text().splitlines()[1:]
        errors = [float(r.split(",")[2]) for r in rows]
        assert len(errors) == 8
        assert all(b < a for a, b in zip(errors, errors[1:]))
        assert errors[-1] <= 0.05 * errors[0]

    def test_non_monotone_ladder_asserts_exit_3(self, tmp_path):
        doc = {"task": "sweep", "output": str(tmp_path / "s"),
               "sweep": {"deltas": [0.25, 0.25]}}
        cfg = write_config(tmp_path, doc)
        assert main(["sweep", "--config", cfg, "--assert"]) == 3
        assert main(["sweep", "--config", cfg]) == 0


class TestDiagnoseCommand:
    def test_spectral_epsilon_and_gate(self, tmp_path):
        out = tmp_path / "diag"
        doc = {
            "task": "diagnose",
            "denoiser": {"kind": "spectral", "transform": "dct", "lam": 0.1},
            "probe": {"shape": [8, 8], "sigma": 0.1, "probes": 2},
            "mu": 1.0,
            "output": str(out),
        }
        cfg = write_config(tmp_path, doc)
        assert main(["diagnose", "--config", cfg]) == 0
        report = json.loads((out / "diagnose.json").read_text())
        eps = 0.1 / 1.1
        assert abs(report["epsilon_hat"] - eps) <= 1e-4
        assert report["asymmetry"] <= 1e-6
        expected_gate = eps / ((1 + eps - 2 * eps**2) * 1.0)
        assert report["theorem_gate"]["pnp_drsdiff_tau_min"] == pytest.approx(
            expected_gate, rel=1e-3
        )

    def test_expansive_denoiser_gate_not_applicable(self, tmp_path):
        out = tmp_path / "diag"
        doc = {
            "task": "diagnose",
            "denoiser": {"kind": "gmm", "weights": [0.5, 0.5],
                         "means": [[-4.0], [4.0]], "variances": [0.05, 0.05]},
            "probe": {"shape": [1], "sigma": 1.5, "probes": 4},
            "output": str(out),
        }
        cfg = write_config(tmp_path, doc)
        assert main(["diagnose", "--config", cfg]) == 0
        report = json.loads((out / "diagnose.json").read_text())
        assert report["epsilon_hat"] >= 1.0
        assert report["theorem_gate"]["pnp_drsdiff_tau_min"] == "not applicable"

    def test_nlm_asymmetry_positive(self, tmp_path):
        out = tmp_path / "diag"
        doc = {
            "task": "diagnose",
            "denoiser": {"kind": "nlm", "patch_radius": 1, "window_radius": 2,
                         "h": 0.3},
            "probe": {"shape": [5, 5], "sigma": 0.1, "probes": 1},
            "output": str(out),
        }
        cfg = write_config(tmp_path, doc)
        assert main(["diagnose", "--config", cfg]) == 0
        report = json.loads((out / "diagnose.json").read_text())
        assert report["asymmetry"] > 1e-4


class TestSampleCommand:
    def gaussian_config(self, out, seed=None):
        doc = {
            "task": "sample",
            "operator": {"kind": "diagonal", "entries": [1.0, 1.5, 0.8]},
            "prior": {"weights": [1.0], "means": [[0.0, 0.0, 0.0]],
                      "variances": [1.0]},
            "sampler": {"delta": 5e-3, "sigma": 0.4, "sigma_w": 0.6,
                        "kept": 4000, "burn_in": 2000, "thin": 2},
            "output": out,
        }
        if seed is not None:
            doc["seed"] = seed
        return doc

    def test_gaussian_config_emits_oracle_gap(self, tmp_path):
        out = tmp_path / "smp"
        cfg = write_config(tmp_path, self.gaussian_config(str(out), seed=1))
        assert main(["sample", "--config", cfg]) == 0
        gap = json.loads((out / "oracle_gap.json").read_text())
        assert set(gap) >= {"mean_gap_inf", "mean_within_tolerance",
                            "max_variance_relative_error"}
        stats_lines = (out / "stats.csv").read_text().splitlines()
        assert stats_lines[0] == "coordinate,mean,variance"
        assert len(stats_lines) == 4

    def test_missing_seed_defaults_to_zero(self, tmp_path):
        out = tmp_path / "smp"
        cfg = write_config(tmp_path, self.gaussian_config(str(out)))
        assert main(["sample", "--config", cfg]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["seed"] == 0

    def test_non_gaussian_stats_only(self, tmp_path):
        out = tmp_path / "smp"
        doc = self.gaussian_config(str(out), seed=2)
        doc["prior"] = {"weights": [0.5, 0.5], "means": [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
                        "variances": [0.5, 0.5]}
        doc["sampler"]["kept"] = 500
        doc["sampler"]["burn_in"] = 200
        cfg = write_config(tmp_path, doc)
        assert main(["sample", "--config", cfg]) == 0
        assert not (out / "oracle_gap.json").exists()
        assert (out / "stats.csv").exists()

    def test_byte_identical_reruns(self, tmp_path):
        doc = self.gaussian_config("unused", seed=5)
        doc["sampler"]["kept"] = 400
        doc["sampler"]["burn_in"] = 100
        cfg = write_config(tmp_path, doc)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert main(["sample", "--config", cfg, "--out", str(out_a)]) == 0
        assert main(["sample", "--config", cfg, "--out", str(out_b)]) == 0
        for name in ("stats.csv", "summary.json", "oracle_gap.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_save_samples_flag(self, tmp_path):
        out = tmp_path / "smp"
        doc = self.gaussian_config(str(out), seed=3)
        doc["sampler"]["kept"] = 100
        doc["sampler"]["burn_in"] = 50
        doc["save_samples"] = True
        cfg = write_config(tmp_path, doc)
        assert main(["sample", "--config", cfg]) == 0
        from pnpkit import load_signal

        samples = load_signal(out / "samples.raw")
        assert samples.shape == (100, 3)


class TestPlotCommand:
    def make_trace_csv(self, path, rows=20, seed=0):
        t = Trace()
        rng = np.random.default_rng(seed)
        t.append(0, objective=1.0, psnr=15.0)
        for k in range(1, rows):
            t.append(k, objective=1.0 / (k + 1), step_residual=2.0 ** (-k),
                     fp_residual=2.0 ** (-k), psnr=15.0 + k * 0.1,
                     seconds=0.001 * k)
        write_trace(t, path)

    def test_single_trace_two_polylines(self, tmp_path):
        trace_path = tmp_path / "t0.csv"
        self.make_trace_csv(trace_path)
        cfg = write_config(tmp_path, {"traces": [str(trace_path)],
                                      "output": "plot.svg"})
        assert main(["plot", "--config", cfg, "--out", str(tmp_path)]) == 0
        svg = (tmp_path / "plot.svg").read_text()
        assert svg.count("<polyline") == 2

    def test_ten_traces_twenty_polylines(self, tmp_path):
        paths = []
        for i in range(10):
            p = tmp_path / f"t{i}.csv"
            self.make_trace_csv(p, seed=i)
            paths.append(str(p))
        cfg = write_config(tmp_path, {"traces": paths, "output": "multi.svg"})
        assert main(["plot", "--config", cfg, "--out", str(tmp_path)]) == 0
        svg = (tmp_path / "multi.svg").read_text()
        assert svg.count("<polyline") == 20

    def test_empty_trace_exit_2(self, tmp_path):
        p = tmp_path / "empty.csv"
        write_trace(Trace(), p)
        cfg = write_config(tmp_path, {"traces": [str(p)]})
        assert main(["plot", "--config", cfg, "--out", str(tmp_path)]) == 2

    def test_malformed_csv_exit_2(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("this,is,not,a,trace\n1,2\n")
        cfg = write_config(tmp_path, {"traces": [str(p)]})
        assert main(["plot", "--config", cfg, "--out", str(tmp_path)]) == 2

    def test_render_handles_nan_columns(self):
        t = Trace()
        t.append(0)
        t.append(1, step_residual=0.5)
        svg = render_traces_svg([t], ["lbl"])
        assert svg.count("<polyline") == 2
