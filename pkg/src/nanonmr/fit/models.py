"""
Model zoo for :func:`fit_curve`.

Every model is a function ``f(x, p, options)`` of the abscissa (SI),
the parameter dict ``p`` and per-model options such as the pulse count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from ..core import GAMMA_E, CoherenceTrace
from ..filtering import SpectralLine, filter_g
from .engine import FitResult, least_squares

__all__ = [
    "Model",
    "ModelSpec",
    "MODELS",
    "model_xy8_single",
    "model_xy8_dual",
    "model_corr_dual_cosine",
    "model_rabi",
    "model_linear",
    "fit_curve",
    "guess_xy8_single",
    "guess_xy8_dual",
    "rabi_contrast",
]


def _xy8_exponent(tau, omega, b, n_pulses, gamma_e):
    return 0.5 * gamma_e**2 * b**2 * filter_g(omega, tau, n_pulses)


def model_xy8_single(tau, p, options=None):
    """s * C(tau) + o for one nuclear line on a stretched-exponential background."""
    opts = {"n_pulses": 8, "gamma_e": GAMMA_E, **(options or {})}
    n_pulses, gamma_e = opts["n_pulses"], opts["gamma_e"]
    tau = np.asarray(tau, dtype=float)
    expo = (n_pulses * tau / p["t2"]) ** p.get("n", 1.0)
    expo = expo + _xy8_exponent(tau, p["omega_l"], p["b_rms"], n_pulses, gamma_e)
    return p.get("scale", 1.0) * np.exp(-expo) + p.get("offset", 0.0)


def model_xy8_dual(tau, p, options=None):
    opts = {"n_pulses": 8, "gamma_e": GAMMA_E, **(options or {})}
    n_pulses, gamma_e = opts["n_pulses"], opts["gamma_e"]
    tau = np.asarray(tau, dtype=float)
    expo = (n_pulses * tau / p["t2"]) ** p.get("n", 1.0)
    expo = expo + _xy8_exponent(tau, p["omega_lh"], p["b_h"], n_pulses, gamma_e)
    expo = expo + _xy8_exponent(tau, p["omega_lf"], p["b_f"], n_pulses, gamma_e)
    return p.get("scale", 1.0) * np.exp(-expo) + p.get("offset", 0.0)


def model_corr_dual_cosine(tau_c, p, options=None):
    """Two exponentially decaying cosines in the correlation delay."""
    t = np.asarray(tau_c, dtype=float)
    h = p["a_h"] * np.exp(-t / p["t_coor_h"]) * np.cos(p["omega_lh"] * t + p["phi_h"])
    f = p["a_f"] * np.exp(-t / p["t_coor_f"]) * np.cos(p["omega_lf"] * t + p["phi_f"])
    return h + f + p.get("offset", 0.0)


def model_rabi(t, p, options=None):
    """(a0 + a1)/2 + (a0 - a1) cos(w t + phi)/2 photon counts per readout."""
    t = np.asarray(t, dtype=float)
    a0, a1 = p["alpha0"], p["alpha1"]
    return (a0 + a1) / 2 + (a0 - a1) * np.cos(p["omega"] * t + p["phi"]) / 2


def _rabi_jac(t, p, names):
    t = np.asarray(t, dtype=float)
    c = np.cos(p["omega"] * t + p["phi"])
    s = np.sin(p["omega"] * t + p["phi"])
    amp = (p["alpha0"] - p["alpha1"]) / 2
    cols = {
        "alpha0": 0.5 + c / 2,
        "alpha1": 0.5 - c / 2,
        "omega": -amp * s * t,
        "phi": -amp * s,
    }
    return np.stack([cols[n] for n in names], axis=1)


def model_linear(x, p, options=None):
    return p["slope"] * np.asarray(x, dtype=float) + p["intercept"]


def _linear_jac(x, p, names):
    x = np.asarray(x, dtype=float)
    cols = {"slope": x, "intercept": np.ones_like(x)}
    return np.stack([cols[n] for n in names], axis=1)


def _positive(v, lo=0.01, hi=100.0):
    return (v * lo, v * hi)


def _around(v, rel=0.5):
    return (v * (1 - rel), v * (1 + rel)) if v > 0 else (v * (1 + rel), v * (1 - rel))


def _amplitude(v):
    a = 10 * abs(v) + 1e-12
    return (-a, a)


def _field(v):
    return (0.0, max(10 * v, 1e-9))


_PHASE = (-2 * math.pi, 2 * math.pi)


@dataclass(frozen=True)
class Model:
    kind: str
    names: tuple
    func: Callable
    default_fixed: Mapping[str, float] = field(default_factory=dict)
    bound_rules: Mapping[str, Callable] = field(default_factory=dict)
    jac: Optional[Callable] = None

    def default_bounds(self, init: Mapping[str, float]) -> dict:
        out = {}
        for n in self.names:
            rule = self.bound_rules.get(n)
            if rule is None:
                out[n] = rule
            elif callable(rule):
                out[n] = tuple(rule(init[n])) if n in init else None
            else:
                out[n] = tuple(rule)
        return out


MODELS = {
    "xy8_single": Model(
        "xy8_single",
        ("omega_l", "b_rms", "t2", "n", "scale", "offset"),
        model_xy8_single,
        {"n": 1.0, "scale": 1.0, "offset": 0.0},
        {"omega_l": _around, "b_rms": _field, "t2": _positive, "n": (0.5, 3.0), "scale": (0.5, 1.5), "offset": (-0.5, 0.5)},
    ),
    "xy8_dual": Model(
        "xy8_dual",
        ("omega_lh", "omega_lf", "b_h", "b_f", "t2", "n", "scale", "offset"),
        model_xy8_dual,
        {"n": 1.0, "scale": 1.0, "offset": 0.0},
        {
            "omega_lh": lambda v: _around(v, 0.1),
            "omega_lf": lambda v: _around(v, 0.1),
            "b_h": _field,
            "b_f": _field,
            "t2": _positive,
            "n": (0.5, 3.0),
            "scale": (0.5, 1.5),
            "offset": (-0.5, 0.5),
        },
    ),
    "corr_dual_cosine": Model(
        "corr_dual_cosine",
        ("a_h", "a_f", "t_coor_h", "t_coor_f", "omega_lh", "omega_lf", "phi_h", "phi_f", "offset"),
        model_corr_dual_cosine,
        {"offset": 0.0},
        {
            "a_h": _amplitude,
            "a_f": _amplitude,
            "t_coor_h": _positive,
            "t_coor_f": _positive,
            "omega_lh": lambda v: _around(v, 0.1),
            "omega_lf": lambda v: _around(v, 0.1),
            "phi_h": _PHASE,
            "phi_f": _PHASE,
            "offset": _amplitude,
        },
    ),
    "rabi": Model(
        "rabi",
        ("alpha0", "alpha1", "omega", "phi"),
        model_rabi,
        {},
        {"alpha0": _field, "alpha1": _field, "omega": _around, "phi": _PHASE},
        jac=_rabi_jac,
    ),
    "linear": Model(
        "linear",
        ("slope", "intercept"),
        model_linear,
        {},
        {"slope": lambda v: (v - 1e3 * (abs(v) + 1), v + 1e3 * (abs(v) + 1)),
         "intercept": lambda v: (v - 1e3 * (abs(v) + 1), v + 1e3 * (abs(v) + 1))},
        jac=_linear_jac,
    ),
}


@dataclass(frozen=True)
class ModelSpec:
    """Which model to fit, which parameters are frozen, and their bounds.

    ``options`` passes model settings that are not parameters
    (``n_pulses`` and ``gamma_e`` for the XY8 models).  ``release`` frees
    parameters that the model fixes by default (e.g. the stretch ``n``).
    """

    kind: str
    fixed: Mapping[str, float] = field(default_factory=dict)
    bounds: Mapping[str, tuple] = field(default_factory=dict)
    options: Mapping[str, object] = field(default_factory=dict)
    release: tuple = ()

    def __post_init__(self):
        if self.kind not in MODELS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {sorted(MODELS)}")
        unknown = (set(self.fixed) | set(self.bounds) | set(self.release)) - set(MODELS[self.kind].names)
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")

    @property
    def model(self) -> Model:
        return MODELS[self.kind]

    def all_fixed(self) -> dict:
        out = {k: v for k, v in self.model.default_fixed.items() if k not in self.release}
        out.update(self.fixed)
        return out

    def free(self) -> list:
        fixed = self.all_fixed()
        return [n for n in self.model.names if n not in fixed]

    def evaluate(self, x, params):
        p = {**self.all_fixed(), **params}
        return self.model.func(x, p, dict(self.options))


def fit_curve(spec: ModelSpec, data: CoherenceTrace, init: Mapping[str, float], max_iter=500) -> FitResult:
    """Weighted least-squares fit of ``spec`` to ``data``.

    Without per-point sigmas, unit weights are used and the covariance is
    scaled by the reduced chi^2.  Bounds missing from ``spec`` are filled
    from per-model rules evaluated at ``init``.
    """
    model = spec.model
    fixed = spec.all_fixed()
    free = spec.free()
    missing = [n for n in free if n not in init]
    if missing:
        raise ValueError(f"missing initial values for {missing}")
    if len(data) < len(free) + 1:
        raise ValueError(f"{len(data)} points cannot constrain {len(free)} free parameters")
    bounds = model.default_bounds(init)
    bounds.update(spec.bounds)
    x, y = data.x, data.y
    weighted = data.sigma is not None
    sigma = data.sigma if weighted else np.ones_like(y)
    options = dict(spec.options)

    def residual(p):
        return (y - model.func(x, p, options)) / sigma

    jac = None
    if model.jac is not None:
        def jac(p):
            return -model.jac(x, p, free) / sigma[:, None]

    result = least_squares(
        residual,
        model.names,
        {n: init[n] for n in free},
        bounds,
        fixed=fixed,
        jac=jac,
        weighted=weighted,
        max_iter=max_iter,
        kind=spec.kind,
    )
    return result


def _moving_average(y, width=5):
    pad = width // 2
    yp = np.pad(y, pad, mode="edge")
    return np.convolve(yp, np.ones(width) / width, mode="valid")


def guess_xy8_single(data: CoherenceTrace, n_pulses=8, gamma_e=GAMMA_E, n=1.0) -> dict:
    """Deterministic starting point for an XY8 single-line fit.

    The dip is the minimum of a 5-point moving average (omega_l = pi / tau_dip);
    T2 comes from the trace at the largest tau; b_rms inverts the dip depth
    through the on-resonance filter value.
    """
    tau, y = data.x, data.y
    smooth = _moving_average(y)
    i = int(np.argmin(smooth))
    tau_dip = tau[i]
    y_end = float(np.clip(smooth[-1], 1e-6, 1 - 1e-9))
    t2 = n_pulses * tau[-1] / (-math.log(y_end)) ** (1 / n)
    bg = math.exp(-((n_pulses * tau_dip / t2) ** n))
    ratio = float(np.clip(smooth[i] / bg, 1e-9, 1 - 1e-9))
    g_peak = 4 * n_pulses**2 * tau_dip**2 / math.pi**2
    b = math.sqrt(-2 * math.log(ratio) / (gamma_e**2 * g_peak))
    return {"omega_l": math.pi / tau_dip, "b_rms": b, "t2": t2, "n": n, "scale": 1.0, "offset": 0.0}


def guess_xy8_dual(data: CoherenceTrace, n_pulses=8, gamma_e=GAMMA_E, n=1.0, gamma_ratio=None) -> dict:
    """Starting point for two lines: the global dip plus the deepest dip at
    least one filter FWHM away.  With ``gamma_ratio`` = gamma_H/gamma_F the
    second dip is placed by ratio instead of searched for."""
    single = guess_xy8_single(data, n_pulses, gamma_e, n)
    tau, y = data.x, _moving_average(data.y)
    tau1 = math.pi / single["omega_l"]
    k = n_pulses / 8
    fwhm = 0.222 * tau1 / k
    if gamma_ratio is not None:
        # the deeper dip is assumed to be the faster (higher gamma) species
        tau2 = tau1 * gamma_ratio
    else:
        far = np.abs(tau - tau1) > fwhm
        tau2 = tau[far][np.argmin(y[far])] if np.any(far) else tau1 * 1.1
    w1, w2 = math.pi / tau1, math.pi / tau2
    if w2 > w1:
        w1, w2 = w2, w1
    t2 = single["t2"]
    bg2 = math.exp(-((n_pulses * (math.pi / w2) / t2) ** n))
    y2 = float(np.interp(math.pi / w2, tau, y))
    ratio = float(np.clip(y2 / bg2, 1e-9, 1 - 1e-9))
    g_peak = 4 * n_pulses**2 * (math.pi / w2) ** 2 / math.pi**2
    b2 = math.sqrt(-2 * math.log(ratio) / (gamma_e**2 * g_peak))
    return {
        "omega_lh": w1,
        "omega_lf": w2,
        "b_h": single["b_rms"],
        "b_f": b2,
        "t2": t2,
        "n": n,
        "scale": 1.0,
        "offset": 0.0,
    }


def rabi_contrast(result: FitResult):
    """Readout contrast (a0 - a1)/a_avg, mean photons a_avg, and the 1-sigma error of the contrast."""
    a0, a1 = result.params["alpha0"], result.params["alpha1"]
    s = a0 + a1
    contrast = 2 * (a0 - a1) / s
    grad = np.zeros(len(result.free))
    names = list(result.free)
    if "alpha0" in names:
        grad[names.index("alpha0")] = 4 * a1 / s**2
    if "alpha1" in names:
        grad[names.index("alpha1")] = -4 * a0 / s**2
    sigma = math.sqrt(float(grad @ result.covariance @ grad))
    return contrast, s / 2, sigma
