"""
Shot-noise readout model, AC field sensitivity, the optimal interrogation
time, and field thresholds for detecting a single nearby spin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .core import CONSTANTS, DomainError, SensorParams

__all__ = [
    "SensitivityBudget",
    "sigma_p",
    "sigma_b",
    "eta_b",
    "tau_opt",
    "budget",
    "single_spin_bmax",
    "single_spin_threshold",
    "depth_for_threshold",
    "dipolar_bz_correlation",
]


def sigma_p(total_time, tau, t_ir, contrast, alpha_avg):
    """Population uncertainty after averaging for ``total_time`` seconds
    with shots of length tau + t_ir."""
    shots = total_time / (tau + t_ir)
    return 1 / math.sqrt(shots) / (contrast * math.sqrt(alpha_avg))


def sigma_b(total_time, tau, sensor: SensorParams):
    """Field uncertainty reached in ``total_time`` from the linear readout slope
    dP/dB = C_tau * gamma * tau / 2."""
    s_p = sigma_p(total_time, tau, sensor.t_ir, sensor.contrast_C, sensor.alpha_avg)
    c_tau = math.exp(-((tau / sensor.t2) ** sensor.stretch_n))
    return 2 * s_p / (c_tau * sensor.gamma_e * tau)


def eta_b(tau, sensor: SensorParams):
    """AC field sensitivity in T/sqrt(Hz) at interrogation time ``tau``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise DomainError("tau must be positive")
    decay = np.exp(-((tau / sensor.t2) ** sensor.stretch_n))
    with np.errstate(divide="ignore", over="ignore"):
        out = (
            2
            / (sensor.gamma_e * decay)
            / np.sqrt(tau)
            * np.sqrt((tau + sensor.t_ir) / tau)
            / (sensor.contrast_C * math.sqrt(sensor.alpha_avg))
        )
    return out if out.ndim else float(out)


def _tau_opt_numeric(t2, t_ir, n):
    def log_eta(tau):
        return (tau / t2) ** n - math.log(tau) + 0.5 * math.log(tau + t_ir)

    grid = t2 * np.logspace(-4, 2, 601)
    vals = [log_eta(t) for t in grid]
    i = int(np.clip(np.argmin(vals), 1, grid.size - 2))
    res = optimize.minimize_scalar(log_eta, bracket=(grid[i - 1], grid[i], grid[i + 1]), method="golden", tol=1e-8)
    return float(res.x)


def tau_opt(t2, t_ir, n=1.0):
    """Interrogation time minimising :func:`eta_b`.

    Closed form for n = 1; otherwise a log-grid search refined by golden
    section on log(eta).
    """
    if not t2 > 0 or t_ir < 0:
        raise DomainError("t2 must be positive and t_ir non-negative")
    if n == 1:
        return 0.25 * (math.sqrt(t2**2 + 12 * t2 * t_ir + 4 * t_ir**2) + t2 - 2 * t_ir)
    return _tau_opt_numeric(t2, t_ir, n)


@dataclass(frozen=True)
class SensitivityBudget:
    eta: float
    tau_opt: float
    sigma_p_per_shot: float
    t2: float
    stretch_n: float
    contrast: float
    alpha_avg: float
    t_ir: float
    gamma_e: float


def budget(sensor: SensorParams) -> SensitivityBudget:
    tm = tau_opt(sensor.t2, sensor.t_ir, sensor.stretch_n)
    per_shot = sigma_p(tm + sensor.t_ir, tm, sensor.t_ir, sensor.contrast_C, sensor.alpha_avg)
    return SensitivityBudget(
        eta=eta_b(tm, sensor),
        tau_opt=tm,
        sigma_p_per_shot=per_shot,
        t2=sensor.t2,
        stretch_n=sensor.stretch_n,
        contrast=sensor.contrast_C,
        alpha_avg=sensor.alpha_avg,
        t_ir=sensor.t_ir,
        gamma_e=sensor.gamma_e,
    )


def single_spin_bmax(gamma_s, d):
    """Largest field (T) of one spin a distance ``d`` straight along the sensor axis."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError("d must be positive")
    out = CONSTANTS.mu0_over_4pi * gamma_s * CONSTANTS.hbar / d**3
    return out if out.ndim else float(out)


def single_spin_threshold(gamma_s, d):
    """Sensitivity (T/sqrt(Hz)) needed for SNR = 1 on a single spin in 1 s."""
    return single_spin_bmax(gamma_s, d) * math.sqrt(1.0)


def depth_for_threshold(gamma_s, eta):
    """Depth at which :func:`single_spin_threshold` equals ``eta``."""
    if not eta > 0:
        raise DomainError("eta must be positive")
    return (CONSTANTS.mu0_over_4pi * gamma_s * CONSTANTS.hbar / eta) ** (1 / 3)


def dipolar_bz_correlation(t, gamma_s, r, n, omega):
    """<B_z(t) B_z(0)> (T^2) of a spin-1/2 at distance ``r`` along unit vector ``n``
    precessing at ``omega``; z is the sensor axis."""
    n = np.asarray(n, dtype=float)
    nz2 = n[..., 2] ** 2 / np.sum(n**2, axis=-1)
    b = CONSTANTS.mu0_over_4pi * gamma_s * CONSTANTS.hbar / np.asarray(r, dtype=float) ** 3
    out = b**2 / 4 * ((1 - 3 * nz2) ** 2 + 9 * (1 - nz2) * nz2 * np.cos(omega * np.asarray(t, dtype=float)))
    return out if np.ndim(out) else float(out)
