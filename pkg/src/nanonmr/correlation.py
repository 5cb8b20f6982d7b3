"""
Correlation spectroscopy: two XY8-k blocks separated by a delay tau_c.

The phases picked up in the two blocks (phi1, phi2) and during the delay
(phi3) are computed exactly for fields made of cosines.  The Monte Carlo
averages the z polarisation
    sin(phi1) sin(phi2) - sin(phi3) cos(phi1) cos(phi2)
over statistically polarised baths with Gaussian quadrature amplitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from .core import DomainError, Xy8Sequence
from .filtering import SpectralLine, filter_g

__all__ = [
    "CorrelationSequence",
    "CosineField",
    "SampledField",
    "BathRealization",
    "CorrelationTrace",
    "UndersamplingError",
    "pattern_transform",
    "phase_integrals",
    "sample_bath",
    "correlation_signal_mc",
    "correlation_signal_analytic",
    "correlation_fft",
    "spectrum_peaks",
    "lorentzian_fwhm",
]

MIN_SAMPLES_PER_PERIOD = 40


class UndersamplingError(ValueError):
    pass


@dataclass(frozen=True)
class CorrelationSequence:
    xy8: Xy8Sequence
    tau_c: float

    def __post_init__(self):
        if not self.tau_c >= 0:
            raise DomainError("tau_c must be non-negative")

    @property
    def second_block_start(self) -> float:
        return self.xy8.total_time + self.tau_c


@dataclass(frozen=True)
class CosineField:
    """B(t) = offset + sum_i a_x[i] cos(w_i t) + a_y[i] sin(w_i t), in tesla."""

    omegas: tuple
    a_x: tuple
    a_y: tuple
    offset: float = 0.0

    @classmethod
    def cosine(cls, amplitude, omega, phase=0.0):
        """A cos(w t + phase)."""
        return cls((omega,), (amplitude * math.cos(phase),), (-amplitude * math.sin(phase),))

    @classmethod
    def constant(cls, b0):
        return cls((), (), (), b0)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full_like(t, self.offset)
        for w, ax, ay in zip(self.omegas, self.a_x, self.a_y):
            out = out + ax * np.cos(w * t) + ay * np.sin(w * t)
        return out


@dataclass(frozen=True, eq=False)
class SampledField:
    """Field samples on a time grid covering both blocks.  ``omega_max`` is the
    highest angular frequency present; the grid must resolve it with at
    least 40 points per period."""

    t: np.ndarray
    b: np.ndarray
    omega_max: float


def _switch_edges(tau, n_pulses):
    """Segment edges of the +-1 pattern and the sign of each segment."""
    flips = (np.arange(n_pulses) + 0.5) * tau
    edges = np.concatenate([[0.0], flips, [n_pulses * tau]])
    signs = np.where(np.arange(n_pulses + 1) % 2 == 0, 1.0, -1.0)
    return edges, signs


def _segment_exp(omega, a, b):
    """integral_a^b exp(i w t) dt, elementwise, regular at w = 0."""
    omega = np.asarray(omega, dtype=float)
    small = np.abs(omega) * np.maximum(np.abs(a), np.abs(b)) < 1e-12
    w = np.where(small, 1.0, omega)
    val = (np.exp(1j * w * b) - np.exp(1j * w * a)) / (1j * w)
    return np.where(small, (b - a) + 0j, val)


def pattern_transform(omega, tau, n_pulses):
    """F(w) = integral over one block of s(t) exp(i w t), with s = +-1 the
    sign pattern of the modulation function.  |F|^2 is the filter function."""
    edges, signs = _switch_edges(tau, n_pulses)
    omega = np.asarray(omega, dtype=float)
    out = np.zeros(omega.shape, dtype=complex)
    for a, b, s in zip(edges[:-1], edges[1:], signs):
        out = out + s * _segment_exp(omega, a, b)
    return out


def _cosine_phases(seq: CorrelationSequence, field: CosineField, gamma):
    xy = seq.xy8
    tau, n = xy.tau, xy.n_pulses
    t_block = xy.total_time
    t0 = seq.second_block_start
    w = np.asarray(field.omegas, dtype=float)
    c = np.asarray(field.a_x, dtype=float) - 1j * np.asarray(field.a_y, dtype=float)
    f = pattern_transform(w, tau, n)
    phi1 = np.sum((c * f).real) + field.offset * pattern_transform(0.0, tau, n).real
    phi2 = np.sum((c * np.exp(1j * w * t0) * f).real) + field.offset * pattern_transform(0.0, tau, n).real
    gap = _segment_exp(w, t_block, t0)
    phi3 = np.sum((c * gap).real) + field.offset * seq.tau_c
    return gamma * float(phi1), gamma * float(phi2), gamma * float(phi3)


def _sampled_phases(seq: CorrelationSequence, field: SampledField, gamma):
    t = np.asarray(field.t, dtype=float)
    b = np.asarray(field.b, dtype=float)
    xy = seq.xy8
    t_end = seq.second_block_start + xy.total_time
    if t[0] > 0 or t[-1] < t_end * (1 - 1e-12):
        raise DomainError("field samples must cover both blocks")
    if field.omega_max > 0 and np.max(np.diff(t)) > 2 * math.pi / field.omega_max / MIN_SAMPLES_PER_PERIOD:
        raise UndersamplingError(
            f"field needs at least {MIN_SAMPLES_PER_PERIOD} samples per period of {field.omega_max:g} rad/s"
        )
    edges, signs = _switch_edges(xy.tau, xy.n_pulses)

    def block(offset):
        total = 0.0
        for a, bnd, s in zip(edges[:-1] + offset, edges[1:] + offset, signs):
            inner = t[(t > a) & (t < bnd)]
            grid = np.concatenate([[a], inner, [bnd]])
            total += s * np.trapezoid(np.interp(grid, t, b), grid)
        return total

    phi1 = block(0.0)
    phi2 = block(seq.second_block_start)
    a, bnd = xy.total_time, seq.second_block_start
    grid = np.concatenate([[a], t[(t > a) & (t < bnd)], [bnd]])
    phi3 = np.trapezoid(np.interp(grid, t, b), grid)
    return gamma * phi1, gamma * phi2, gamma * phi3


def phase_integrals(seq: CorrelationSequence, field, gamma):
    """(phi1, phi2, phi3) in rad for a :class:`CosineField` (exact) or a
    :class:`SampledField` (exact for the piecewise-linear interpolant).

    phi3 is the free precession phase during the delay and carries the
    same ``gamma`` as the decoupled phases.
    """
    if isinstance(field, CosineField):
        return _cosine_phases(seq, field, gamma)
    if isinstance(field, SampledField):
        return _sampled_phases(seq, field, gamma)
    raise TypeError("field must be a CosineField or SampledField")


@dataclass(frozen=True, eq=False)
class BathRealization:
    """Quadrature amplitudes of each line for an ensemble of baths.

    ``a_x`` and ``a_y`` have shape (n_samples, n_lines); each entry is a
    zero-mean normal with variance B_RMS^2, so <a_x^2 + a_y^2> = 2 B_RMS^2.
    """

    a_x: np.ndarray
    a_y: np.ndarray
    tau_corr: tuple
    seed: int


def sample_bath(lines: Sequence[SpectralLine], n_samples, seed, tau_corr=None) -> BathRealization:
    rng = np.random.default_rng(seed)
    b = np.array([ln.b_rms for ln in lines])
    a = rng.normal(size=(n_samples, len(lines), 2)) * b[None, :, None]
    tc = tuple(tau_corr) if tau_corr is not None else (math.inf,) * len(lines)
    return BathRealization(a[..., 0], a[..., 1], tc, seed)


@dataclass(frozen=True, eq=False)
class CorrelationTrace:
    tau_c: np.ndarray
    signal: np.ndarray
    stderr: np.ndarray
    n_samples: int = 0
    seed: Optional[int] = None


def correlation_signal_mc(
    xy8: Xy8Sequence,
    tau_c,
    lines: Sequence[SpectralLine],
    gamma_e,
    field_corr_times: Optional[Sequence[float]] = None,
    n_samples=100_000,
    seed=0,
    chunk=32,
) -> CorrelationTrace:
    """Ensemble-averaged z polarisation after the correlation sequence.

    Baths are drawn in antithetic pairs (a, -a), which zeroes the phi3
    term pair by pair.  With ``field_corr_times`` the second-block
    amplitudes are an Ornstein-Uhlenbeck update of the first-block ones,
    a2 = r a1 + sqrt(1 - r^2) xi with r = exp(-tau_c / t_corr); the field
    is frozen within each block.  Returns the mean and its standard error
    at every delay.
    """
    tau_c = np.atleast_1d(np.asarray(tau_c, dtype=float))
    if np.any(tau_c < 0):
        raise DomainError("tau_c must be non-negative")
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    if not lines:
        z = np.zeros_like(tau_c)
        return CorrelationTrace(tau_c, z, z.copy(), n_samples, seed)
    half = n_samples // 2
    tcorr = field_corr_times if field_corr_times is not None else [math.inf] * len(lines)
    if len(tcorr) != len(lines):
        raise ValueError("one correlation time per line")
    rng = np.random.default_rng(seed)
    bath = sample_bath(lines, half, rng)
    w = np.array([ln.omega_l for ln in lines])
    b = np.array([ln.b_rms for ln in lines])
    f = pattern_transform(w, xy8.tau, xy8.n_pulses)  # (lines,)
    c1 = bath.a_x - 1j * bath.a_y  # (half, lines)
    phi1 = gamma_e * (c1 * f).real.sum(axis=1)
    t_block = xy8.total_time
    decorrelating = [i for i, t in enumerate(tcorr) if math.isfinite(t)]

    mean = np.empty_like(tau_c)
    err = np.empty_like(tau_c)
    for start in range(0, tau_c.size, chunk):
        tc = tau_c[start:start + chunk]  # (m,)
        t0 = t_block + tc
        c2 = np.repeat(c1[:, None, :], tc.size, axis=1)  # (half, m, lines)
        for i in decorrelating:
            r = np.exp(-tc / tcorr[i])
            xi = rng.normal(size=(half, tc.size, 2)) * b[i]
            c2[:, :, i] = r * c1[:, None, i] + np.sqrt(1 - r**2) * (xi[..., 0] - 1j * xi[..., 1])
        rot = np.exp(1j * w[None, :] * t0[:, None]) * f[None, :]  # (m, lines)
        phi2 = gamma_e * (c2 * rot[None, :, :]).real.sum(axis=2)
        gap = _segment_exp(w[None, :], t_block, t0[:, None])  # (m, lines)
        phi3 = gamma_e * (c1[:, None, :] * gap[None, :, :]).real.sum(axis=2)
        p1 = phi1[:, None]
        plus = np.sin(p1) * np.sin(phi2) - np.sin(phi3) * np.cos(p1) * np.cos(phi2)
        minus = np.sin(-p1) * np.sin(-phi2) - np.sin(-phi3) * np.cos(p1) * np.cos(phi2)
        pair = 0.5 * (plus + minus)
        mean[start:start + chunk] = pair.mean(axis=0)
        err[start:start + chunk] = pair.std(axis=0, ddof=1) / math.sqrt(half)
    return CorrelationTrace(tau_c, mean, err, 2 * half, seed)


def correlation_signal_analytic(
    xy8: Xy8Sequence,
    tau_c,
    lines: Sequence[SpectralLine],
    gamma_e,
    corr_times: Optional[Sequence[float]] = None,
    exact=False,
):
    """Closed-form correlation signal.

    Each line contributes gamma^2 B^2 G(w_L, tau) cos(w_L (tau_c + N tau)),
    times exp(-tau_c / t_corr) when a correlation time is given.  This is
    <phi1 phi2>, valid for small phases.  With ``exact`` the Gaussian
    ensemble average exp(-var) sinh(cov) of sin(phi1) sin(phi2) is returned
    instead, which is what the Monte Carlo estimates at any field strength.
    """
    tau_c = np.asarray(tau_c, dtype=float)
    cov = np.zeros_like(tau_c)
    var = 0.0
    t_block = xy8.total_time
    corr_times = corr_times if corr_times is not None else [math.inf] * len(lines)
    for ln, tc in zip(lines, corr_times):
        v = gamma_e**2 * ln.b_rms**2 * filter_g(ln.omega_l, xy8.tau, xy8.n_pulses)
        env = np.exp(-tau_c / tc) if math.isfinite(tc) else 1.0
        cov = cov + v * env * np.cos(ln.omega_l * (tau_c + t_block))
        var += v
    if exact:
        return np.exp(-var) * np.sinh(cov)
    return cov


def correlation_fft(tau_c, s, pad=4):
    """Single-sided amplitude spectrum of a uniformly sampled trace.

    The mean is removed, no window is applied (rectangular), and the
    trace is zero-padded to ``pad`` times its length.  Returns frequencies
    in Hz and |FFT| * dt.
    """
    tau_c = np.asarray(tau_c, dtype=float)
    s = np.asarray(s, dtype=float)
    dt = np.diff(tau_c)
    if tau_c.size < 2 or not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        raise ValueError("tau_c must be uniformly spaced")
    n = pad * s.size
    spec = np.fft.rfft(s - s.mean(), n=n)
    return np.fft.rfftfreq(n, dt[0]), np.abs(spec) * dt[0]


def spectrum_peaks(freq, mag, n_peaks=2):
    """Frequencies of the ``n_peaks`` tallest local maxima, ascending."""
    idx, _ = signal.find_peaks(mag)
    top = idx[np.argsort(mag[idx])[::-1][:n_peaks]]
    return np.sort(freq[top])


def lorentzian_fwhm(t_coor):
    """FWHM in Hz of the power spectrum of exp(-t/T) cos(w t): 1/(pi T)."""
    return 1 / (math.pi * t_coor)
