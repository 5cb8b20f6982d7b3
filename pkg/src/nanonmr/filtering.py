"""
XY8-k filter function, the sensor modulation function and the coherence
model for delta-line and continuous field spectra.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

from .core import DomainError, Xy8Sequence

__all__ = [
    "SpectralLine",
    "DecoherenceBackground",
    "QuadratureError",
    "filter_g",
    "modulation_g",
    "background_factor",
    "xy8_coherence",
    "coherence_lines",
    "coherence_spectrum",
    "gaussian_line_spectrum",
]

# below this |cos(omega tau / 2)| the resonance ratio is taken from its series
_SERIES_THRESHOLD = 1e-6


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved):
        super().__init__(f"{message} (achieved relative tolerance {achieved:.3g})")
        self.achieved = achieved


@dataclass(frozen=True)
class SpectralLine:
    """A narrow field line at angular frequency ``omega_l`` with RMS amplitude ``b_rms`` (T)."""

    omega_l: float
    b_rms: float

    def __post_init__(self):
        if not self.omega_l > 0:
            raise DomainError("omega_l must be positive")
        if not self.b_rms >= 0:
            raise DomainError("b_rms must be non-negative")


@dataclass(frozen=True)
class DecoherenceBackground:
    """Stretched-exponential background exp(-(t/t2)^n)."""

    t2: float
    n: float = 1.0

    def __post_init__(self):
        if not self.t2 > 0 or not self.n > 0:
            raise DomainError("t2 and n must be positive")

    def factor(self, t):
        return background_factor(t, self.t2, self.n)


def background_factor(t, t2, n):
    return np.exp(-((np.asarray(t, dtype=float) / t2) ** n))


def _resonance_ratio_sq(x, n_pulses):
    """(sin(N x) / cos(x))**2 for even N, regular at the odd multiples of pi/2.

    With x = x0 + y and x0 the nearest odd multiple of pi/2 the ratio is
    exactly (sin(N y) / sin(y))**2, which only needs care at y -> 0.
    """
    x0 = (np.floor(x / math.pi) + 0.5) * math.pi
    y = x - x0
    sy = np.sin(y)
    near = np.abs(sy) < _SERIES_THRESHOLD
    n = float(n_pulses)
    y_safe = np.where(near, 1.0, y)
    direct = np.sin(n * y_safe) / np.where(near, 1.0, sy)
    # 4th-order expansion of sin(N y)/sin(y) about y = 0
    n2 = n * n
    series = n * (1 - (n2 - 1) * y**2 / 6 + (n2 - 1) * (3 * n2 - 7) * y**4 / 360)
    return np.where(near, series, direct) ** 2


def filter_g(omega, tau, n_pulses):
    """Filter function G(omega, tau) of an N-pulse XY8-type block, in s^2.

    ``omega`` may be an array.  G is even in omega; the 0/0 points at
    omega = 0 and at the resonances cos(omega tau / 2) = 0 are evaluated
    through their limits.  Odd pulse counts have true poles there and
    return ``inf``.
    """
    if not np.all(np.asarray(tau) > 0):
        raise DomainError(f"tau must be positive, got {tau}")
    if int(n_pulses) != n_pulses or n_pulses < 1:
        raise DomainError(f"n_pulses must be a positive integer, got {n_pulses}")
    w = np.abs(np.asarray(omega, dtype=float))
    zero = w == 0
    w_safe = np.where(zero, 1.0, w)
    pre = 16 * np.sin(w_safe * tau / 4) ** 4 / w_safe**2
    x = w_safe * tau / 2
    if n_pulses % 2 == 0:
        ratio = _resonance_ratio_sq(x, n_pulses)
    else:
        with np.errstate(divide="ignore"):
            ratio = np.sin(n_pulses * x) ** 2 / np.cos(x) ** 2
    out = np.where(zero, 0.0, pre * ratio)
    return out if out.ndim else float(out)


def modulation_g(t, tau, n_pulses, gamma=1.0):
    """Signed modulation function of the block: +gamma or -gamma.

    Within the m-th interpulse interval the first half carries
    gamma*(-1)**m and the second half gamma*(-1)**(m+1).  Points on a
    boundary belong to the interval on their left.
    """
    if not tau > 0:
        raise DomainError("tau must be positive")
    t = np.asarray(t, dtype=float)
    total = n_pulses * tau
    if np.any(t < 0) or np.any(t > total * (1 + 1e-12)):
        raise DomainError(f"t must lie in [0, {total:g}]")
    m = np.maximum(np.ceil(t / tau) - 1, 0)
    frac = t - m * tau
    first_half = frac <= tau / 2
    parity = np.where(first_half, m, m + 1) % 2
    out = gamma * np.where(parity == 0, 1.0, -1.0)
    return out if out.ndim else float(out)


def xy8_coherence(tau, n_pulses, gamma_e, lines: Iterable[SpectralLine], t2, n=1.0):
    """Vectorised delta-line coherence over an array of interpulse spacings."""
    tau = np.asarray(tau, dtype=float)
    exponent = (n_pulses * tau / t2) ** n
    for line in lines:
        exponent = exponent + 0.5 * gamma_e**2 * line.b_rms**2 * filter_g(line.omega_l, tau, n_pulses)
    return np.exp(-exponent)


def coherence_lines(seq: Xy8Sequence, gamma_e, lines: Sequence[SpectralLine], bg: DecoherenceBackground):
    """Coherence of one XY8-k block under a sum of delta lines.

    Each line pi*B^2*[delta(w - wL) + delta(w + wL)] contributes
    exp(-gamma_e^2 * B^2 * G(wL, tau) / 2).
    """
    return float(xy8_coherence(seq.tau, seq.n_pulses, gamma_e, lines, bg.t2, bg.n))


def gaussian_line_spectrum(lines: Sequence[SpectralLine], width_fraction=1e-4):
    """S_B(omega) made of normalised Gaussians of width ``width_fraction * omega_l``
    standing in for the delta lines.  Returns (s_b, breakpoints)."""
    centres = np.array([ln.omega_l for ln in lines])
    amps = np.array([math.pi * ln.b_rms**2 for ln in lines])
    sig = width_fraction * centres

    def s_b(omega):
        omega = np.asarray(omega, dtype=float)[..., None]
        g = np.exp(-0.5 * ((omega - centres) / sig) ** 2) + np.exp(-0.5 * ((omega + centres) / sig) ** 2)
        return np.sum(amps * g / (sig * math.sqrt(2 * math.pi)), axis=-1)

    points = []
    for c, s in zip(centres, sig):
        points.extend([c - 10 * s, c - 2 * s, c, c + 2 * s, c + 10 * s])
    return s_b, points


def coherence_spectrum(
    seq: Xy8Sequence,
    gamma_e,
    s_b: Callable,
    bg: DecoherenceBackground,
    omega_max=None,
    points: Sequence[float] = (),
    rtol=1e-8,
):
    """Coherence for a general two-sided field spectrum ``s_b`` (T^2 s per rad/s).

    The integral over omega > 0 is doubled (S_B must be even).  The window
    [0, omega_max] is split at the filter maxima and at ``points``, which
    should bracket any narrow features of ``s_b``.
    """
    tau, n_pulses = seq.tau, seq.n_pulses
    w_hi = 20 * math.pi / tau
    if omega_max is not None:
        w_hi = max(w_hi, omega_max)
    if len(points):
        w_hi = max(w_hi, 1.5 * max(points))
    peaks = math.pi / tau * np.arange(1, w_hi * tau / math.pi, 2)
    edges = np.unique(np.concatenate([[0.0, w_hi], peaks, [p for p in points if 0 < p < w_hi]]))

    def f(w):
        return filter_g(w, tau, n_pulses) * s_b(w)

    segments = list(zip(edges[:-1], edges[1:]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        # coarse pass fixes the absolute scale, so empty tails are not refined forever
        rough = sum(abs(integrate.quad(f, a, b, epsabs=0.0, epsrel=1e-3, limit=100)[0]) for a, b in segments)
        epsabs = 0.1 * rtol * rough / len(segments)
        total, err_total = 0.0, 0.0
        for a, b in segments:
            val, err = integrate.quad(f, a, b, epsabs=epsabs, epsrel=rtol, limit=500)
            total += val
            err_total += err
    if total != 0 and err_total > rtol * abs(total):
        raise QuadratureError("spectrum quadrature did not converge", err_total / abs(total))
    # two-sided integral / 2pi
    phase_var = gamma_e**2 * 2 * total / (2 * math.pi)
    return float(math.exp(-phase_var / 2) * bg.factor(seq.total_time))
