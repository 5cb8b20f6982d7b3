"""Regenerate the synthetic fixtures under fixtures/ (deterministic).

    python3 scripts/make_fixtures.py
"""

import json
import math
from pathlib import Path

import numpy as np

from nanonmr.bath import LayerSpec, brms_layer
from nanonmr.cli.io import write_table
from nanonmr.core import FLUORINE, GAMMA_E, GAMMA_F, GAMMA_H, PROTON, Xy8Sequence
from nanonmr.correlation import correlation_signal_mc
from nanonmr.filtering import SpectralLine, xy8_coherence
from nanonmr.relaxation import RateMatrix, synthetic_curves

ROOT = Path(__file__).resolve().parents[1] / "fixtures"
ALPHA = math.radians(4.0)


def xy8_single(truth):
    b0 = 235e-4
    d = 2.0e-9
    b = brms_layer(LayerSpec(PROTON, d), ALPHA)
    tau = np.linspace(400e-9, 600e-9, 101)
    y = xy8_coherence(tau, 8, GAMMA_E, [SpectralLine(GAMMA_H * b0, b)], 20e-6, 1.0)
    rng = np.random.default_rng(11)
    noise = 0.01
    y = y + rng.normal(0, noise, y.shape)
    write_table(ROOT / "xy8_single.csv", ["tau_us", "coherence", "sigma"], [tau * 1e6, y, np.full_like(y, noise)],
                ["synthetic XY8-1 sweep, one proton line", "seed=11"])
    truth["xy8_single.csv"] = {"b0_gauss": 235.0, "depth_nm": 2.0, "b_rms_ut": b * 1e6,
                               "f_l_khz": GAMMA_H * b0 / 2e3 / math.pi, "t2_us": 20.0, "noise": noise, "seed": 11}


def xy8_dual(truth):
    b0 = 215.8e-4
    d, t = 3.6e-9, 0.8e-9
    b_h = brms_layer(LayerSpec(PROTON, d, t), ALPHA)
    b_f = brms_layer(LayerSpec(FLUORINE, d + t), ALPHA)
    # XY8-4: the two dips are 6 % apart, XY8-1 would merge them
    tau = np.linspace(500e-9, 620e-9, 241)
    lines = [SpectralLine(GAMMA_H * b0, b_h), SpectralLine(GAMMA_F * b0, b_f)]
    y = xy8_coherence(tau, 32, GAMMA_E, lines, 40e-6, 1.0)
    rng = np.random.default_rng(12)
    noise = 0.003
    y = y + rng.normal(0, noise, y.shape)
    write_table(ROOT / "xy8_dual.csv", ["tau_us", "coherence", "sigma"], [tau * 1e6, y, np.full_like(y, noise)],
                ["synthetic XY8-4 sweep, 1H layer under a 19F bath", "seed=12"])
    truth["xy8_dual.csv"] = {"b0_gauss": 215.8, "depth_nm": 3.6, "thickness_nm": 0.8, "b_h_ut": b_h * 1e6,
                             "b_f_ut": b_f * 1e6, "t2_us": 40.0, "k": 4, "noise": noise, "seed": 12}


def correlation(truth):
    b0 = 215.8e-4
    lines = [SpectralLine(GAMMA_H * b0, 0.2e-6), SpectralLine(GAMMA_F * b0, 0.15e-6)]
    corr = [20e-6, 12e-6]
    xy8 = Xy8Sequence(1, math.pi / np.mean([ln.omega_l for ln in lines]))
    tau_c = np.arange(300) * 0.2e-6
    tr = correlation_signal_mc(xy8, tau_c, lines, GAMMA_E, corr, n_samples=100_000, seed=13)
    write_table(ROOT / "correlation.csv", ["tau_c_us", "signal", "stderr"], [tau_c * 1e6, tr.signal, tr.stderr],
                ["synthetic correlation trace, decorrelating 1H and 19F fields", "seed=13"])
    truth["correlation.csv"] = {"b0_gauss": 215.8, "b_rms_ut": [0.2, 0.15], "corr_time_us": [20.0, 12.0],
                                "n_samples": 100_000, "seed": 13}


def relaxation(truth):
    rates = (2.3, 11.8, 5.0)
    rm = RateMatrix.from_khz(*rates)
    t = np.linspace(0, 200e-6, 41)
    folder = ROOT / "relaxation"
    folder.mkdir(exist_ok=True)
    rows = []
    for c in synthetic_curves(rm, t):
        prep, read = c.meta["prep"], c.meta["read"]
        name = f"prep{prep:+d}_read{read:+d}.csv".replace("+0", "0")
        write_table(folder / name, ["t_us", "population"], [c.x * 1e6, c.y], [f"noiseless population, prep={prep} read={read}"])
        rows.append((name, prep, read))
    write_table(folder / "manifest.csv", ["file", "prep", "read"], [[r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows]])
    truth["relaxation"] = {"rates_khz": list(rates), "noise": 0.0}


if __name__ == "__main__":
    ROOT.mkdir(exist_ok=True)
    truth = {}
    xy8_single(truth)
    xy8_dual(truth)
    correlation(truth)
    relaxation(truth)
    with open(ROOT / "truth.json", "w") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
