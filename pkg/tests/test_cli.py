import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nanonmr.cli import main
from nanonmr.cli.config import SCHEMAS, ConfigError, load_config
from nanonmr.cli.io import read_table

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def run(command, config, out, *extra):
    return main([command, "--config", str(config), "--out", str(out), *extra])


def report(out):
    return json.loads((out / "report.json").read_text())


def write_ini(path, section, body, seed=None):
    text = ""
    if seed is not None:
        text += f"[run]\nseed = {seed}\n\n"
    text += f"[{section}]\n" + "\n".join(f"{k} = {v}" for k, v in body.items()) + "\n"
    path.write_text(text)
    return path


def data_lines(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


def error_doc(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as ex:
        main(["--help"])
    assert ex.value.code == 0
    text = capsys.readouterr().out
    for name in SCHEMAS:
        assert name in text


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "nanonmr", "calibrate", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "--config" in res.stdout and "--seed" in res.stdout and "--format" in res.stdout


def test_simulate_xy8(tmp_path):
    assert run("simulate-xy8", CONFIGS / "simulate_xy8.ini", tmp_path) == 0
    t = read_table(tmp_path / "xy8.csv", ["tau_us", "coherence"])
    assert t["tau_us"].size == 201
    rep = report(tmp_path)
    assert rep["command"] == "simulate-xy8" and rep["seed"] is None
    curve = rep["results"]["curves"][0]
    assert curve["lines"][0]["dip_tau_ns"] == pytest.approx(499.7, abs=0.2)
    assert curve["lines"][0]["b_rms_ut"] == pytest.approx(3.7, abs=0.05)
    assert 400 < curve["min_tau_ns"] < 600


def test_depth_series_orders_dips(tmp_path):
    assert run("simulate-xy8", CONFIGS / "simulate_xy8_depths.ini", tmp_path) == 0
    mins = [r["min_coherence"] for r in report(tmp_path)["results"]["curves"]]
    assert mins[0] < mins[1] < mins[2]
    assert sorted(p.name for p in tmp_path.glob("xy8_d*.csv")) == ["xy8_d1.5nm.csv", "xy8_d2.5nm.csv", "xy8_d2nm.csv"]


def test_no_field_gives_background(tmp_path):
    cfg = write_ini(tmp_path / "c.ini", "simulate-xy8", {"b0_gauss": 235, "tau_start_ns": 400, "tau_stop_ns": 600, "tau_points": 11, "nuclei": "", "t2_us": 20})
    assert run("simulate-xy8", cfg, tmp_path / "o") == 0
    t = read_table(tmp_path / "o" / "xy8.csv", ["tau_us", "coherence"])
    np.testing.assert_allclose(t["coherence"], np.exp(-8 * t["tau_us"] / 20), rtol=1e-14)


def test_noise_requires_seed(tmp_path, capsys):
    body = {"b0_gauss": 235, "tau_start_ns": 400, "tau_stop_ns": 600, "depths_nm": 2, "noise": 0.01}
    cfg = write_ini(tmp_path / "c.ini", "simulate-xy8", body)
    assert run("simulate-xy8", cfg, tmp_path / "o") == 2
    assert "seed" in error_doc(capsys)["error"]["message"]
    assert run("simulate-xy8", cfg, tmp_path / "o", "--seed", "5") == 0


def test_fit_single(tmp_path):
    assert run("fit", CONFIGS / "fit_xy8_single.ini", tmp_path) == 0
    res = report(tmp_path)["results"]
    truth = json.loads((ROOT / "fixtures" / "truth.json").read_text())["xy8_single.csv"]
    assert res["converged"]
    assert res["depth_nm"] == pytest.approx(truth["depth_nm"], abs=0.1)
    assert res["b_rms_ut"] == pytest.approx(truth["b_rms_ut"], abs=3 * res["b_rms_ut_sigma"])
    fit = read_table(tmp_path / "fit.csv", ["tau_us", "coherence", "model", "residual"])
    np.testing.assert_allclose(fit["coherence"] - fit["model"], fit["residual"], atol=1e-15)


def test_fit_dual(tmp_path):
    assert run("fit", CONFIGS / "fit_xy8_dual.ini", tmp_path) == 0
    res = report(tmp_path)["results"]
    truth = json.loads((ROOT / "fixtures" / "truth.json").read_text())["xy8_dual.csv"]
    assert res["depth_nm"] == pytest.approx(truth["depth_nm"], rel=0.1)
    assert res["thickness_nm"] == pytest.approx(truth["thickness_nm"], rel=0.1)
    assert res["physical"]


def test_fit_iteration_limit_exits_4(tmp_path, capsys):
    body = {"model": "xy8_single", "data": ROOT / "fixtures" / "xy8_single.csv", "max_iter": 1}
    cfg = write_ini(tmp_path / "c.ini", "fit", body)
    assert run("fit", cfg, tmp_path / "o") == 4
    assert error_doc(capsys)["error"] == {"type": "convergence", "code": 4, "message": "fit stopped before meeting the convergence criteria"}
    assert report(tmp_path / "o")["results"]["converged"] is False


def test_calibrate_single_and_dual(tmp_path):
    assert run("calibrate", CONFIGS / "calibrate.ini", tmp_path / "a") == 0
    assert report(tmp_path / "a")["results"]["depth_nm"] == pytest.approx(2.0, abs=0.1)
    assert run("calibrate", CONFIGS / "calibrate_dual.ini", tmp_path / "b") == 0
    res = report(tmp_path / "b")["results"]
    assert res["depth_nm"] == pytest.approx(3.6, abs=0.2)
    assert res["thickness_nm"] == pytest.approx(0.8, abs=0.1)


def test_sensitivity(tmp_path):
    assert run("sensitivity", CONFIGS / "sensitivity.ini", tmp_path) == 0
    res = report(tmp_path)["results"]
    budget = read_table(tmp_path / "budget.csv", ["tau_us", "eta_nt_rthz", "is_optimum"])
    i = int(np.argmin(budget["eta_nt_rthz"]))
    assert budget["is_optimum"][i] == 1 and budget["is_optimum"].sum() == 1
    assert budget["tau_us"][i] == pytest.approx(res["tau_opt_us"], rel=1e-12)
    th = read_table(tmp_path / "thresholds.csv", ["depth_nm", "proton_nt_rthz", "electron_nt_rthz"])
    np.testing.assert_allclose(th["electron_nt_rthz"] / th["proton_nt_rthz"], 658.2, rtol=1e-3)


def test_sensitivity_without_overhead(tmp_path):
    cfg = write_ini(tmp_path / "c.ini", "sensitivity", {"t2_us": 30, "t_ir_us": 0})
    assert run("sensitivity", cfg, tmp_path / "o") == 0
    assert report(tmp_path / "o")["results"]["tau_opt_us"] == pytest.approx(15.0, rel=1e-14)


def test_volume_map_small_grid(tmp_path):
    cfg = write_ini(tmp_path / "c.ini", "volume-map", {"depth_nm": 2.0, "voxel_nm": 0.2})
    assert run("volume-map", cfg, tmp_path / "o") == 0
    res = report(tmp_path / "o")["results"]
    assert res["closure"] == pytest.approx(1.0, abs=0.03)
    assert res["detection_spins"] > 0
    cum = data_lines(tmp_path / "o" / "cumulative.csv")
    assert cum[0] == "construction,edge_nm,volume_nm3,fraction,spins"


def test_volume_map_zero_density(tmp_path):
    cfg = write_ini(tmp_path / "c.ini", "volume-map", {"depth_nm": 2.0, "density_nm3": 0})
    assert run("volume-map", cfg, tmp_path / "o") == 0
    assert report(tmp_path / "o")["results"]["empty"] is True
    assert data_lines(tmp_path / "o" / "voxels.csv") == ["plane,x_nm,y_nm,z_nm,weight_t2"]


def test_simulate_correlation(tmp_path):
    assert run("simulate-correlation", CONFIGS / "simulate_correlation.ini", tmp_path) == 0
    res = report(tmp_path)["results"]
    assert report(tmp_path)["seed"] == 2024
    bin_khz = res["fft_bin_khz"]
    np.testing.assert_allclose(res["fft_peaks_khz"], res["expected_khz"], atol=bin_khz)
    read_table(tmp_path / "correlation.csv", ["tau_c_us", "signal", "stderr"])
    read_table(tmp_path / "fft.csv", ["freq_khz", "magnitude"])


def test_simulate_correlation_needs_seed(tmp_path, capsys):
    body = {"b0_gauss": 215.8, "tau_c_step_us": 0.2, "tau_c_points": 10, "b_rms_ut": "1.0, 0.8"}
    cfg = write_ini(tmp_path / "c.ini", "simulate-correlation", body)
    assert run("simulate-correlation", cfg, tmp_path / "o") == 2
    assert error_doc(capsys)["error"]["type"] == "config"
    cfg2 = write_ini(tmp_path / "d.ini", "simulate-correlation", {**body, "method": "analytic"})
    assert run("simulate-correlation", cfg2, tmp_path / "o") == 0


def test_simulate_correlation_without_lines(tmp_path):
    body = {"b0_gauss": 215.8, "tau_ns": 550, "tau_c_step_us": 0.2, "tau_c_points": 10, "nuclei": "", "b_rms_ut": "", "n_samples": 100}
    cfg = write_ini(tmp_path / "c.ini", "simulate-correlation", body, seed=1)
    assert run("simulate-correlation", cfg, tmp_path / "o") == 0
    t = read_table(tmp_path / "o" / "correlation.csv", ["tau_c_us", "signal"])
    assert np.all(t["signal"] == 0)


def test_seeded_runs_are_byte_identical(tmp_path):
    body = {"b0_gauss": 215.8, "tau_c_step_us": 0.2, "tau_c_points": 50, "b_rms_ut": "1.0, 0.8", "corr_time_us": "10, 20", "n_samples": 2000}
    cfg = write_ini(tmp_path / "c.ini", "simulate-correlation", body)
    for out in ("a", "b"):
        assert run("simulate-correlation", cfg, tmp_path / out, "--seed", "17") == 0
    for name in ("correlation.csv", "fft.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert report(tmp_path / "a")["config_digest"] == report(tmp_path / "b")["config_digest"]
    assert run("simulate-correlation", cfg, tmp_path / "c", "--seed", "18") == 0
    assert (tmp_path / "a" / "correlation.csv").read_bytes() != (tmp_path / "c" / "correlation.csv").read_bytes()


def test_cli_seed_overrides_config(tmp_path):
    assert run("simulate-correlation", CONFIGS / "simulate_correlation.ini", tmp_path, "--seed", "3", "--format", "json") == 0
    assert report(tmp_path)["seed"] == 3


def test_fit_correlation(tmp_path):
    assert run("fit-correlation", CONFIGS / "fit_correlation.ini", tmp_path) == 0
    res = report(tmp_path)["results"]
    truth = json.loads((ROOT / "fixtures" / "truth.json").read_text())["correlation.csv"]
    assert res["t_coor_h_us"] == pytest.approx(truth["corr_time_us"][0], rel=0.15)
    assert res["t_coor_f_us"] == pytest.approx(truth["corr_time_us"][1], rel=0.15)


def test_fit_relaxation(tmp_path):
    assert run("fit-relaxation", CONFIGS / "fit_relaxation.ini", tmp_path) == 0
    res = report(tmp_path)["results"]
    rates = res["rates_khz"]
    np.testing.assert_allclose([rates["gamma_p1"], rates["gamma_m1"], rates["gamma_2"]], [2.3, 11.8, 5.0], rtol=1e-6)
    ident = res["trace_identity"]
    assert ident["lambda_sum_khz"] == pytest.approx(ident["minus_two_rate_sum_khz"], rel=1e-10)
    eig = read_table(tmp_path / "eigenvalues.csv", ["index", "lambda_khz"])
    np.testing.assert_allclose(eig["lambda_khz"], [0.0, -10.62, -27.58], atol=0.005)


def test_json_format_embeds_tables(tmp_path):
    assert run("calibrate", CONFIGS / "calibrate.ini", tmp_path, "--format", "json") == 0
    rep = report(tmp_path)
    assert rep["outputs"] == []
    assert not (tmp_path / "calibration.csv").exists()
    assert rep["results"]["tables"]["calibration.csv"]["depth_nm"][0] == pytest.approx(rep["results"]["depth_nm"])


def test_report_fields(tmp_path):
    assert run("calibrate", CONFIGS / "calibrate.ini", tmp_path) == 0
    rep = report(tmp_path)
    assert {"command", "config", "config_digest", "seed", "version", "outputs", "results", "timestamp"} <= set(rep)
    assert len(rep["config_digest"]) == 64
    header = (tmp_path / "calibration.csv").read_text().splitlines()
    assert header[0].startswith("# nanonmr")
    assert any(ln == f"# config_digest={rep['config_digest']}" for ln in header)


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = write_ini(tmp_path / "c.ini", "calibrate", {"b_rms_h_ut": 3.7, "colour": "blue"})
    assert run("calibrate", cfg, tmp_path / "o") == 2
    doc = error_doc(capsys)
    assert doc["command"] == "calibrate"
    assert doc["error"]["code"] == 2 and "colour" in doc["error"]["message"]
    assert not (tmp_path / "o" / "report.json").exists()


@pytest.mark.parametrize(
    "body",
    [
        {"b_rms_h_ut": -1},
        {"b_rms_h_ut": "abc"},
        {"b_rms_h_ut": 3.7, "alpha_deg": 120},
        {},
    ],
)
def test_bad_values_exit_2(tmp_path, body):
    cfg = write_ini(tmp_path / "c.ini", "calibrate", body)
    assert run("calibrate", cfg, tmp_path / "o") == 2


def test_missing_config_file_exits_2(tmp_path):
    assert run("calibrate", tmp_path / "nope.ini", tmp_path / "o") == 2


def test_malformed_data_exits_3(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("tau_us,coherence\n0.4,0.9\n0.41,oops\n")
    cfg = write_ini(tmp_path / "c.ini", "fit", {"model": "xy8_single", "data": bad.name})
    assert run("fit", cfg, tmp_path / "o") == 3
    doc = error_doc(capsys)
    assert doc["error"]["type"] == "data" and "line 3" in doc["error"]["message"]


def test_missing_columns_exit_3(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,value\n0.4,0.9\n")
    cfg = write_ini(tmp_path / "c.ini", "fit", {"model": "xy8_single", "data": bad.name})
    assert run("fit", cfg, tmp_path / "o") == 3


def test_incomplete_manifest_exits_3(tmp_path):
    src = ROOT / "fixtures" / "relaxation"
    lines = (src / "manifest.csv").read_text().splitlines()
    (tmp_path / "manifest.csv").write_text("\n".join(lines[:-1]) + "\n")
    for p in src.glob("prep*.csv"):
        (tmp_path / p.name).write_bytes(p.read_bytes())
    cfg = write_ini(tmp_path / "c.ini", "fit-relaxation", {"manifest": "manifest.csv"})
    assert run("fit-relaxation", cfg, tmp_path / "o") == 3


def test_config_paths_resolve_against_config_dir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = load_config("fit", CONFIGS / "fit_xy8_single.ini")
    assert cfg.params["data"] == (ROOT / "fixtures" / "xy8_single.csv").resolve()


def test_unexpected_section_rejected(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[calibrate]\nb_rms_h_ut = 3.7\n\n[fit]\nmodel = xy8_single\n")
    with pytest.raises(ConfigError):
        load_config("calibrate", path)
