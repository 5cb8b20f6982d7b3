"""
Shared value types, physical constants and unit helpers.

Everything inside the library is computed in SI units.  Laboratory units
(nm, G, uT, us, kHz) only appear at the edges: config files, CSV headers
and reports.  The helpers below do the conversions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Mapping, Optional

import numpy as np

__all__ = [
    "PhysicalConstants",
    "CONSTANTS",
    "GAMMA_H",
    "GAMMA_F",
    "GAMMA_E",
    "NucleusSpec",
    "PROTON",
    "FLUORINE",
    "SensorParams",
    "Xy8Sequence",
    "TraceKind",
    "CoherenceTrace",
    "DomainError",
    "larmor_omega",
    "nm_to_m",
    "m_to_nm",
    "gauss_to_tesla",
    "tesla_to_gauss",
    "ut_to_tesla",
    "tesla_to_ut",
    "us_to_s",
    "s_to_us",
    "khz_to_rad",
    "rad_to_khz",
]


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


@dataclass(frozen=True)
class PhysicalConstants:
    """Field constant, reduced Planck constant and built-in gyromagnetic ratios.

    Gyromagnetic ratios are angular (rad s^-1 T^-1).
    """

    mu0_over_4pi: float = 1e-7
    hbar: float = 1.054571817e-34
    gamma_h: float = 2 * math.pi * 42.577e6
    gamma_f: float = 2 * math.pi * 40.078e6
    gamma_e: float = 2 * math.pi * 28.024e9


CONSTANTS = PhysicalConstants()
GAMMA_H = CONSTANTS.gamma_h
GAMMA_F = CONSTANTS.gamma_f
GAMMA_E = CONSTANTS.gamma_e


# unit helpers; one multiply or divide per hop
def nm_to_m(x):
    return x * 1e-9


def m_to_nm(x):
    return x / 1e-9


def gauss_to_tesla(x):
    return x * 1e-4


def tesla_to_gauss(x):
    return x / 1e-4


def ut_to_tesla(x):
    return x * 1e-6


def tesla_to_ut(x):
    return x / 1e-6


def us_to_s(x):
    return x * 1e-6


def s_to_us(x):
    return x / 1e-6


def khz_to_rad(x):
    """Cyclic frequency in kHz to angular frequency in rad/s."""
    return x * (2e3 * math.pi)


def rad_to_khz(x):
    return x / (2e3 * math.pi)


@dataclass(frozen=True)
class NucleusSpec:
    """A nuclear species: label, gyromagnetic ratio (rad/s/T), number density (m^-3)."""

    label: str
    gamma: float
    density: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if not self.density >= 0:
            raise DomainError(f"density must be non-negative, got {self.density}")

    def with_density(self, density: float) -> "NucleusSpec":
        return NucleusSpec(self.label, self.gamma, density)


PROTON = NucleusSpec("1H", GAMMA_H, 69.5e27)
FLUORINE = NucleusSpec("19F", GAMMA_F, 42e27)


@dataclass(frozen=True)
class SensorParams:
    """Shallow spin sensor.

    Attributes
    ----------
    gamma_e : float
        Sensor gyromagnetic ratio, rad s^-1 T^-1.
    depth_d : float
        Distance from the sensor to the surface, m.
    alpha : float
        Tilt of the sensor axis from the surface normal, rad.
    t2 : float
        Coherence time, s.
    stretch_n : float
        Stretch exponent of the background decay.
    contrast_C : float
        Optical readout contrast (alpha0 - alpha1) / alpha_avg.
    alpha_avg : float
        Mean collected photons per readout.
    t_ir : float
        Initialisation plus readout overhead per shot, s.
    """

    depth_d: float = 2e-9
    alpha: float = math.radians(4.0)
    t2: float = 20e-6
    stretch_n: float = 1.0
    contrast_C: float = 0.2
    alpha_avg: float = 0.05
    t_ir: float = 1e-6
    gamma_e: float = GAMMA_E

    def __post_init__(self):
        if not self.depth_d > 0:
            raise DomainError("depth_d must be positive")
        if not self.t2 > 0:
            raise DomainError("t2 must be positive")
        if not self.stretch_n > 0:
            raise DomainError("stretch_n must be positive")
        if not 0 <= self.contrast_C <= 2:
            raise DomainError("contrast_C must lie in [0, 2]")
        if not self.alpha_avg > 0:
            raise DomainError("alpha_avg must be positive")
        if not self.t_ir >= 0:
            raise DomainError("t_ir must be non-negative")

    @property
    def axis(self) -> np.ndarray:
        """Unit vector of the sensor axis; tilt is taken in the x-z plane."""
        return np.array([math.sin(self.alpha), 0.0, math.cos(self.alpha)])


@dataclass(frozen=True)
class Xy8Sequence:
    """XY8-k decoupling block: N = 8k pi-pulses spaced by ``tau`` seconds."""

    k: int
    tau: float

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise DomainError(f"k must be a positive integer, got {self.k}")
        if not self.tau > 0:
            raise DomainError(f"tau must be positive, got {self.tau}")

    @property
    def n_pulses(self) -> int:
        return 8 * int(self.k)

    @property
    def total_time(self) -> float:
        return self.n_pulses * self.tau


class TraceKind(str, Enum):
    XY8_SWEEP = "xy8_sweep"
    CORRELATION_SWEEP = "correlation_sweep"
    RELAXATION_POPULATION = "relaxation_population"
    RABI = "rabi"


@dataclass(frozen=True, eq=False)
class CoherenceTrace:
    """An (x, y, sigma) series.  ``meta`` carries free-form tags such as
    the prepared/read states of a relaxation curve."""

    x: np.ndarray
    y: np.ndarray
    sigma: Optional[np.ndarray] = None
    kind: TraceKind = TraceKind.XY8_SWEEP
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        if x.ndim != 1 or y.shape != x.shape:
            raise ValueError("x and y must be 1-d arrays of equal length")
        if x.size > 1 and not np.all(np.diff(x) > 0):
            raise ValueError("x must be strictly increasing")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.sigma is not None:
            s = np.array(self.sigma, dtype=float)
            if s.shape != x.shape:
                raise ValueError("sigma must match x in length")
            if not np.all(s > 0):
                raise ValueError("sigma must be positive")
            s.flags.writeable = False
            object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "kind", TraceKind(self.kind))
        object.__setattr__(self, "meta", MappingProxyType(dict(self.meta)))

    def __len__(self):
        return self.x.size


def larmor_omega(gamma_n: float, b0: float) -> float:
    """Angular Larmor frequency gamma_n * B0 (rad/s) for a field ``b0`` in tesla."""
    if np.any(np.asarray(b0) < 0):
        raise DomainError("b0 must be non-negative")
    return gamma_n * b0
