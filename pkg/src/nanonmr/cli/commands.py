"""
Subcommand implementations.  Each takes a validated :class:`RunConfig`
and returns (results, tables); ``tables`` is a list of
(file name, header, columns).  Writing files is left to the caller.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from ..bath import LayerSpec, brms_layer, depth_from_brms, depth_thickness_two_species, GridSpec, volume_map
from ..core import (
    FLUORINE,
    GAMMA_E,
    GAMMA_F,
    GAMMA_H,
    PROTON,
    CoherenceTrace,
    DomainError,
    SensorParams,
    Xy8Sequence,
    gauss_to_tesla,
)
from ..correlation import (
    correlation_fft,
    correlation_signal_analytic,
    correlation_signal_mc,
    spectrum_peaks,
)
from ..filtering import SpectralLine, xy8_coherence
from ..fit import ModelSpec, ParameterDegeneracyError, fit_curve, guess_xy8_dual, guess_xy8_single
from ..fit.engine import FitError
from ..relaxation import STATES, eigen_rates, fit_relaxation_joint
from ..sensitivity import budget, depth_for_threshold, eta_b, single_spin_threshold, tau_opt
from .config import ConfigError, ConvergenceError, DataError
from .io import read_table

__all__ = ["COMMANDS"]

_NUCLEI = {"1H": PROTON, "19F": FLUORINE}


def _nucleus(label, params):
    nuc = _NUCLEI[label]
    key = "density_h_nm3" if label == "1H" else "density_f_nm3"
    if key in params:
        nuc = nuc.with_density(params[key] * 1e27)
    return nuc


def _khz(omega):
    return omega / (2 * math.pi) / 1e3


def _trace(x, y, sigma, name, **kw):
    try:
        return CoherenceTrace(x, y, sigma, **kw)
    except ValueError as err:
        raise DataError(f"{name}: {err}") from None


def _fit_or_raise(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ParameterDegeneracyError as err:
        raise ConvergenceError(f"parameters are degenerate along {err.direction}") from None
    except FitError as err:
        raise ConvergenceError(str(err)) from None


def simulate_xy8(cfg):
    p = cfg.params
    b0 = gauss_to_tesla(p["b0_gauss"])
    alpha = math.radians(p["alpha_deg"])
    nuclei = [_nucleus(label, p) for label in p["nuclei"]]
    k = p["k"]
    n_pulses = 8 * k
    if not p["tau_stop_ns"] > p["tau_start_ns"]:
        raise ConfigError("tau_stop_ns must exceed tau_start_ns")
    tau = np.linspace(p["tau_start_ns"], p["tau_stop_ns"], p["tau_points"]) * 1e-9
    t2 = p["t2_us"] * 1e-6

    cases = []
    if not nuclei:
        cases.append((None, []))
    elif p["b_rms_ut"]:
        if len(p["b_rms_ut"]) != len(nuclei):
            raise ConfigError("b_rms_ut needs one value per nucleus")
        if p["depths_nm"]:
            raise ConfigError("give either depths_nm or b_rms_ut, not both")
        cases.append((None, [b * 1e-6 for b in p["b_rms_ut"]]))
    elif p["depths_nm"]:
        t = p["thickness_nm"] * 1e-9
        for d_nm in p["depths_nm"]:
            d = d_nm * 1e-9
            if len(nuclei) == 2 and math.isfinite(t):
                # thin 1H layer [d, d + t] under a semi-infinite 19F bath
                fields = [brms_layer(LayerSpec(nuclei[0], d, t), alpha), brms_layer(LayerSpec(nuclei[1], d + t), alpha)]
            else:
                fields = [brms_layer(LayerSpec(nuc, d, t), alpha) for nuc in nuclei]
            cases.append((d_nm, fields))
    else:
        raise ConfigError("nuclei are listed but neither depths_nm nor b_rms_ut is given")

    rng = np.random.default_rng(cfg.seed) if p["noise"] > 0 else None
    results = {"curves": []}
    tables = []
    for d_nm, fields in cases:
        lines = [SpectralLine(nuc.gamma * b0, b) for nuc, b in zip(nuclei, fields)]
        y = xy8_coherence(tau, n_pulses, GAMMA_E, lines, t2, p["n"])
        name = "xy8.csv" if len(cases) == 1 else f"xy8_d{d_nm:g}nm.csv"
        header, cols = ["tau_us", "coherence"], [tau * 1e6, y]
        if rng is not None:
            y = y + rng.normal(0.0, p["noise"], y.shape)
            header, cols = ["tau_us", "coherence", "sigma"], [tau * 1e6, y, np.full_like(y, p["noise"])]
        tables.append((name, header, cols))
        i = int(np.argmin(cols[1]))
        results["curves"].append(
            {
                "file": name,
                "depth_nm": d_nm,
                "lines": [
                    {"nucleus": nuc.label, "f_l_khz": _khz(ln.omega_l), "b_rms_ut": ln.b_rms * 1e6, "dip_tau_ns": math.pi / ln.omega_l * 1e9}
                    for nuc, ln in zip(nuclei, lines)
                ],
                "min_tau_ns": tau[i] * 1e9,
                "min_coherence": cols[1][i],
            }
        )
    return results, tables


def _load_xy8(path):
    t = read_table(path, ["tau_us", "coherence"], ["sigma"])
    return _trace(t["tau_us"] * 1e-6, t["coherence"], t.get("sigma"), Path(path).name)


def fit(cfg):
    p = cfg.params
    data = _load_xy8(p["data"])
    n_pulses = 8 * p["k"]
    release = ("n",) if p["free_stretch"] else ()
    spec = ModelSpec(p["model"], options={"n_pulses": n_pulses, "gamma_e": GAMMA_E}, release=release)
    alpha = math.radians(p["alpha_deg"])
    h, f = _nucleus("1H", p), _nucleus("19F", p)
    if p["model"] == "xy8_single":
        init = guess_xy8_single(data, n_pulses, GAMMA_E)
    else:
        init = guess_xy8_dual(data, n_pulses, GAMMA_E, gamma_ratio=GAMMA_H / GAMMA_F)
    init = {n: init[n] for n in spec.free()}
    res = _fit_or_raise(fit_curve, spec, data, init, max_iter=p["max_iter"])
    q = res.params
    s = res.sigmas
    out = {
        "converged": res.converged,
        "chi2": res.chi2,
        "reduced_chi2": res.reduced_chi2,
        "n_iter": res.n_iter,
        "t2_us": q["t2"] * 1e6,
        "t2_us_sigma": s["t2"] * 1e6,
        "n": q["n"],
        "n_sigma": s["n"],
        "fit": res.to_dict(),
    }
    if p["model"] == "xy8_single":
        out.update(
            f_l_khz=_khz(q["omega_l"]),
            f_l_khz_sigma=_khz(s["omega_l"]),
            b_rms_ut=q["b_rms"] * 1e6,
            b_rms_ut_sigma=s["b_rms"] * 1e6,
            b0_gauss=q["omega_l"] / GAMMA_H * 1e4,
            depth_nm=depth_from_brms(q["b_rms"], h, alpha) * 1e9,
        )
    else:
        dt = depth_thickness_two_species(q["b_h"], q["b_f"], h, f, alpha)
        out.update(
            f_lh_khz=_khz(q["omega_lh"]),
            f_lf_khz=_khz(q["omega_lf"]),
            b_h_ut=q["b_h"] * 1e6,
            b_h_ut_sigma=s["b_h"] * 1e6,
            b_f_ut=q["b_f"] * 1e6,
            b_f_ut_sigma=s["b_f"] * 1e6,
            depth_nm=dt.depth * 1e9,
            thickness_nm=dt.thickness * 1e9,
            physical=dt.physical,
        )
    model = spec.evaluate(data.x, q)
    table = ("fit.csv", ["tau_us", "coherence", "model", "residual"], [data.x * 1e6, data.y, model, data.y - model])
    return out, [table]


def calibrate(cfg):
    p = cfg.params
    alpha = math.radians(p["alpha_deg"])
    h = _nucleus("1H", p)
    if p["b_rms_f_ut"] is None:
        d = depth_from_brms(p["b_rms_h_ut"] * 1e-6, h, alpha)
        out = {"depth_nm": d * 1e9, "thickness_nm": None, "physical": True}
    else:
        dt = depth_thickness_two_species(p["b_rms_h_ut"] * 1e-6, p["b_rms_f_ut"] * 1e-6, h, _nucleus("19F", p), alpha)
        out = {"depth_nm": dt.depth * 1e9, "thickness_nm": dt.thickness * 1e9, "physical": dt.physical}
    thick = out["thickness_nm"] if out["thickness_nm"] is not None else math.inf
    table = ("calibration.csv", ["depth_nm", "thickness_nm", "physical"], [[out["depth_nm"]], [thick], [int(out["physical"])]])
    return out, [table]


def sensitivity(cfg):
    p = cfg.params
    sensor = SensorParams(
        t2=p["t2_us"] * 1e-6,
        stretch_n=p["n"],
        contrast_C=p["contrast"],
        alpha_avg=p["alpha_avg"],
        t_ir=p["t_ir_us"] * 1e-6,
    )
    b = budget(sensor)
    tau = np.unique(np.append(b.tau_opt * np.logspace(-2, 2, p["tau_points"]), b.tau_opt))
    eta = eta_b(tau, sensor)
    mark = (tau == b.tau_opt).astype(int)
    if not p["depth_max_nm"] > p["depth_min_nm"]:
        raise ConfigError("depth_max_nm must exceed depth_min_nm")
    depth = np.linspace(p["depth_min_nm"], p["depth_max_nm"], p["depth_points"])
    th_h = single_spin_threshold(GAMMA_H, depth * 1e-9)
    th_e = single_spin_threshold(GAMMA_E, depth * 1e-9)
    out = {
        "eta_nt_rthz": b.eta * 1e9,
        "tau_opt_us": b.tau_opt * 1e6,
        "sigma_p_per_shot": b.sigma_p_per_shot,
        "proton_depth_limit_nm": depth_for_threshold(GAMMA_H, b.eta) * 1e9,
        "electron_depth_limit_nm": depth_for_threshold(GAMMA_E, b.eta) * 1e9,
        "tau_opt_closed_form_us": tau_opt(sensor.t2, sensor.t_ir) * 1e6 if sensor.stretch_n == 1 else None,
    }
    tables = [
        ("budget.csv", ["tau_us", "eta_nt_rthz", "is_optimum"], [tau * 1e6, eta * 1e9, mark]),
        ("thresholds.csv", ["depth_nm", "proton_nt_rthz", "electron_nt_rthz"], [depth, th_h * 1e9, th_e * 1e9]),
    ]
    return out, tables


def volume_map_cmd(cfg):
    p = cfg.params
    nuc = _NUCLEI[p["nucleus"]]
    if p["density_nm3"] is not None:
        nuc = nuc.with_density(p["density_nm3"] * 1e27)
    d = p["depth_nm"] * 1e-9
    voxel = p["voxel_nm"] * 1e-9 if p["voxel_nm"] is not None else None
    slice_header = ["plane", "x_nm", "y_nm", "z_nm", "weight_t2"]
    cum_header = ["construction", "edge_nm", "volume_nm3", "fraction", "spins"]
    if nuc.density == 0:
        empty = [[] for _ in range(5)]
        out = {"empty": True, "total_t2": 0.0, "spins": 0.0}
        return out, [("voxels.csv", slice_header, empty), ("cumulative.csv", cum_header, [list(c) for c in empty])]
    sensor = SensorParams(depth_d=d, alpha=math.radians(p["alpha_deg"]))
    vm = volume_map(sensor, nuc, GridSpec.for_depth(d, voxel))
    det = vm.detection_volume(p["fraction"])
    cube = vm.cube_volume(p["fraction"])
    out = {
        "empty": False,
        "closure": vm.closure,
        "analytic_brms_ut": math.sqrt(vm.analytic) * 1e6,
        "voxel_nm": vm.voxel * 1e9,
        "fraction": p["fraction"],
        "detection_edge_nm": det.edge * 1e9,
        "detection_volume_nm3": det.volume * 1e27,
        "detection_spins": det.spins,
        "polarized_equivalent": det.polarized_equivalent,
        "cube_edge_nm": cube.edge * 1e9,
        "cube_spins": cube.spins,
    }
    xs, zs = vm.axis_xy * 1e9, vm.axis_z * 1e9
    nx, nz = xs.size, zs.size
    xz = [
        ["xz"] * (nx * nz),
        np.repeat(xs, nz),
        np.zeros(nx * nz),
        np.tile(zs, nx),
        vm.xz_slice.reshape(-1),
    ]
    xy = [["xy"] * (nx * nx), np.repeat(xs, nx), np.tile(xs, nx), np.full(nx * nx, zs[0]), vm.xy_slice.reshape(-1)]
    voxels = [list(a) + list(b) for a, b in zip(xz, xy)]
    # the iso table is thinned to every 100th entry; the cube table is kept whole
    iso_v, iso_f = vm.iso_volume[::100], vm.iso_fraction[::100]
    cum = [
        ["iso"] * iso_v.size + ["cube"] * vm.cube_edges.size,
        np.concatenate([np.cbrt(iso_v), vm.cube_edges]) * 1e9,
        np.concatenate([iso_v, vm.cube_edges**3]) * 1e27,
        np.concatenate([iso_f, vm.cube_fraction]),
        nuc.density * np.concatenate([iso_v, vm.cube_edges**3]),
    ]
    return out, [("voxels.csv", slice_header, voxels), ("cumulative.csv", cum_header, cum)]


def simulate_correlation(cfg):
    p = cfg.params
    b0 = gauss_to_tesla(p["b0_gauss"])
    nuclei = [_NUCLEI[label] for label in p["nuclei"]]
    if len(p["b_rms_ut"]) != len(nuclei):
        raise ConfigError("b_rms_ut needs one value per nucleus")
    if p["corr_time_us"] and len(p["corr_time_us"]) != len(nuclei):
        raise ConfigError("corr_time_us needs one value per nucleus")
    lines = [SpectralLine(nuc.gamma * b0, b * 1e-6) for nuc, b in zip(nuclei, p["b_rms_ut"])]
    corr = [t * 1e-6 for t in p["corr_time_us"]] or None
    if p["tau_ns"] is not None:
        tau = p["tau_ns"] * 1e-9
    elif lines:
        # centre the filter between the lines
        tau = math.pi / np.mean([ln.omega_l for ln in lines])
    else:
        raise ConfigError("tau_ns is required when no nuclei are given")
    xy8 = Xy8Sequence(p["k"], tau)
    tau_c = (p["tau_c_start_us"] + p["tau_c_step_us"] * np.arange(p["tau_c_points"])) * 1e-6
    if p["method"] == "mc":
        tr = correlation_signal_mc(xy8, tau_c, lines, GAMMA_E, corr, n_samples=p["n_samples"], seed=cfg.seed)
        sig, err = tr.signal, tr.stderr
    else:
        sig = correlation_signal_analytic(xy8, tau_c, lines, GAMMA_E, corr, exact=True)
        err = np.zeros_like(sig)
    freq, mag = correlation_fft(tau_c, sig, pad=p["fft_pad"])
    peaks = spectrum_peaks(freq, mag, len(lines)) if lines else np.array([])
    out = {
        "tau_ns": tau * 1e9,
        "n_pulses": xy8.n_pulses,
        "expected_khz": sorted(_khz(ln.omega_l) for ln in lines),
        "fft_peaks_khz": (peaks / 1e3).tolist(),
        "fft_bin_khz": (freq[1] - freq[0]) / 1e3,
        "method": p["method"],
    }
    tables = [
        ("correlation.csv", ["tau_c_us", "signal", "stderr"], [tau_c * 1e6, sig, err]),
        ("fft.csv", ["freq_khz", "magnitude"], [freq / 1e3, mag]),
    ]
    return out, tables


def _linear_init(t, y, w, omegas, t_coor):
    """Amplitude and phase of each damped cosine by linear least squares."""
    cols = []
    for om in omegas:
        env = np.exp(-t / t_coor)
        cols += [env * np.cos(om * t), env * np.sin(om * t)]
    a = np.column_stack(cols) * w[:, None]
    coef = np.linalg.lstsq(a, y * w, rcond=None)[0]
    out = []
    for c, s in coef.reshape(-1, 2):
        out.append((math.hypot(c, s), math.atan2(-s, c)))
    return out


def fit_correlation(cfg):
    p = cfg.params
    t = read_table(p["data"], ["tau_c_us", "signal"], ["stderr"])
    sigma = t.get("stderr")
    if sigma is not None and not np.all(sigma > 0):
        sigma = None
    data = _trace(t["tau_c_us"] * 1e-6, t["signal"], sigma, Path(p["data"]).name, kind="correlation_sweep")
    b0 = gauss_to_tesla(p["b0_gauss"])
    wh, wf = GAMMA_H * b0, GAMMA_F * b0
    tc0 = p["t_coor_us"] * 1e-6
    w = 1 / data.sigma if data.sigma is not None else np.ones(len(data))
    (ah, ph), (af, pf) = _linear_init(data.x, data.y, w, (wh, wf), tc0)
    init = {
        "a_h": ah, "a_f": af, "t_coor_h": tc0, "t_coor_f": tc0,
        "omega_lh": wh, "omega_lf": wf, "phi_h": ph, "phi_f": pf,
    }
    spec = ModelSpec("corr_dual_cosine")
    res = _fit_or_raise(fit_curve, spec, data, {n: init[n] for n in spec.free()}, max_iter=p["max_iter"])
    q, s = res.params, res.sigmas
    out = {
        "converged": res.converged,
        "reduced_chi2": res.reduced_chi2,
        "t_coor_h_us": q["t_coor_h"] * 1e6,
        "t_coor_h_us_sigma": s["t_coor_h"] * 1e6,
        "t_coor_f_us": q["t_coor_f"] * 1e6,
        "t_coor_f_us_sigma": s["t_coor_f"] * 1e6,
        "f_lh_khz": _khz(q["omega_lh"]),
        "f_lf_khz": _khz(q["omega_lf"]),
        "a_h": q["a_h"],
        "a_f": q["a_f"],
        "fit": res.to_dict(),
    }
    model = spec.evaluate(data.x, q)
    return out, [("fit_correlation.csv", ["tau_c_us", "signal", "model"], [data.x * 1e6, data.y, model])]


def _read_manifest(path):
    entries = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and not r[0].lstrip().startswith("#")]
    if not rows or [c.strip() for c in rows[0][1]] != ["file", "prep", "read"]:
        raise DataError(f"{Path(path).name}: header must be file,prep,read")
    for lineno, row in rows[1:]:
        if len(row) != 3:
            raise DataError(f"{Path(path).name} line {lineno}: expected 3 fields")
        try:
            prep, read = int(row[1]), int(row[2])
        except ValueError:
            raise DataError(f"{Path(path).name} line {lineno}: prep and read must be +1, 0 or -1") from None
        if prep not in STATES or read not in STATES:
            raise DataError(f"{Path(path).name} line {lineno}: prep and read must be +1, 0 or -1")
        if (prep, read) in entries:
            raise DataError(f"{Path(path).name} line {lineno}: duplicate entry for prep={prep}, read={read}")
        entries[(prep, read)] = row[0].strip()
    missing = [(a, b) for a in STATES for b in STATES if (a, b) not in entries]
    if missing:
        raise DataError(f"{Path(path).name}: missing manifest entries for (prep, read) = {missing}")
    return entries


def fit_relaxation(cfg):
    p = cfg.params
    base = Path(p["manifest"]).parent
    curves = []
    for (prep, read), name in _read_manifest(p["manifest"]).items():
        t = read_table(base / name, ["t_us", "population"], ["sigma"])
        curves.append(
            _trace(t["t_us"] * 1e-6, t["population"], t.get("sigma"), name, kind="relaxation_population", meta={"prep": prep, "read": read})
        )
    fitres = _fit_or_raise(fit_relaxation_joint, curves, p["init_khz"], nuisance=p["nuisance"], max_iter=p["max_iter"])
    lam = np.array(fitres.eigenvalues) / 1e3
    rates = fitres.rates.rates_khz
    out = fitres.to_dict()
    out.update(
        converged=fitres.result.converged,
        trace_identity={"lambda_sum_khz": float(lam.sum()), "minus_two_rate_sum_khz": -2 * sum(rates)},
    )
    table = ("eigenvalues.csv", ["index", "lambda_khz"], [np.arange(1, 4), lam])
    return out, [table]


COMMANDS = {
    "simulate-xy8": simulate_xy8,
    "fit": fit,
    "calibrate": calibrate,
    "sensitivity": sensitivity,
    "volume-map": volume_map_cmd,
    "simulate-correlation": simulate_correlation,
    "fit-correlation": fit_correlation,
    "fit-relaxation": fit_relaxation,
}
