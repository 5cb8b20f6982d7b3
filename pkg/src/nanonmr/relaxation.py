"""
Longitudinal relaxation of a three-level sensor (m_s = +1, 0, -1).

Populations obey dn/dt = Gamma n with a symmetric rate matrix whose
columns sum to zero.  Rates are stored in s^-1; the laboratory unit is
kHz meaning 10^3 s^-1 (no factor 2 pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import CoherenceTrace, DomainError
from .fit.engine import FitResult, least_squares

__all__ = [
    "STATES",
    "RateMatrix",
    "PopulationState",
    "RelaxationFit",
    "build_rate_matrix",
    "propagate",
    "populations",
    "eigen_rates",
    "effective_t1",
    "synthetic_curves",
    "fit_relaxation_joint",
]

STATES = (1, 0, -1)
_INDEX = {s: i for i, s in enumerate(STATES)}
KHZ = 1e3


@dataclass(frozen=True, eq=False)
class RateMatrix:
    """Rates gamma_p1 (+1 <-> 0), gamma_m1 (-1 <-> 0) and gamma_2 (+1 <-> -1) in s^-1."""

    gamma_p1: float
    gamma_m1: float
    gamma_2: float
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if min(self.gamma_p1, self.gamma_m1, self.gamma_2) < 0:
            raise DomainError("rates must be non-negative")
        gp, gm, g2 = self.gamma_p1, self.gamma_m1, self.gamma_2
        m = np.array(
            [
                [-gp - g2, gp, g2],
                [gp, -gp - gm, gm],
                [g2, gm, -gm - g2],
            ]
        )
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_khz(cls, gamma_p1, gamma_m1, gamma_2):
        return cls(gamma_p1 * KHZ, gamma_m1 * KHZ, gamma_2 * KHZ)

    @property
    def rates_khz(self):
        return (self.gamma_p1 / KHZ, self.gamma_m1 / KHZ, self.gamma_2 / KHZ)

    def swapped(self):
        """The same physics with the labels +1 and -1 exchanged."""
        return RateMatrix(self.gamma_m1, self.gamma_p1, self.gamma_2)


@dataclass(frozen=True, eq=False)
class PopulationState:
    """Populations of (+1, 0, -1)."""

    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        if p.shape != (3,):
            raise ValueError("a population state has three entries")
        if np.any(p < -1e-12) or abs(p.sum() - 1) > 1e-12:
            raise DomainError("populations must be non-negative and sum to one")
        p.flags.writeable = False
        object.__setattr__(self, "p", p)

    @classmethod
    def pure(cls, state):
        p = np.zeros(3)
        p[_INDEX[state]] = 1.0
        return cls(p)

    def __getitem__(self, state):
        return self.p[_INDEX[state]]


def build_rate_matrix(gamma_p1, gamma_m1, gamma_2) -> RateMatrix:
    """Rate matrix from rates in s^-1."""
    return RateMatrix(float(gamma_p1), float(gamma_m1), float(gamma_2))


def _eig(rm: RateMatrix):
    return np.linalg.eigh(rm.matrix)


def populations(n0, rm: RateMatrix, t):
    """Populations at an array of times; shape (len(t), 3)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("t must be non-negative")
    p0 = n0.p if isinstance(n0, PopulationState) else np.asarray(n0, dtype=float)
    lam, v = _eig(rm)
    coef = v.T @ p0
    return (np.exp(np.multiply.outer(t, lam)) * coef) @ v.T


def propagate(n0: PopulationState, rm: RateMatrix, t) -> PopulationState:
    """exp(Gamma t) n0 through the symmetric eigendecomposition."""
    if t < 0:
        raise DomainError("t must be non-negative")
    if t == 0:
        return n0
    p = populations(n0, rm, float(t))
    p = np.clip(p, 0.0, None)
    return PopulationState(p / p.sum())


def eigen_rates(rm: RateMatrix):
    """Eigenvalues of Gamma in s^-1, sorted descending (the first is zero)."""
    lam = np.sort(np.linalg.eigvalsh(rm.matrix))[::-1]
    lam[0] = 0.0
    return tuple(float(x) for x in lam)


def effective_t1(rm: RateMatrix, subspace=(0, -1)):
    """Effective T1 (s) of a pair of states.

    The difference e_a - e_b is expanded in the eigenvectors of Gamma and
    the eigenvalue carrying the largest coefficient sets T1 = 1/|lambda|.
    """
    a, b = subspace
    if a == b:
        raise ValueError("subspace needs two distinct states")
    vec = np.zeros(3)
    vec[_INDEX[a]] = 1.0
    vec[_INDEX[b]] = -1.0
    lam, v = _eig(rm)
    coef = np.abs(v.T @ vec)
    k = int(np.argmax(coef))
    if lam[k] == 0:
        return math.inf
    return 1.0 / abs(lam[k])


def synthetic_curves(rm: RateMatrix, t, noise=0.0, seed=None) -> list:
    """Nine population curves (every prepared state, every read state)."""
    rng = np.random.default_rng(seed)
    t = np.asarray(t, dtype=float)
    curves = []
    for prep in STATES:
        pops = populations(PopulationState.pure(prep), rm, t)
        for read in STATES:
            y = pops[:, _INDEX[read]]
            sigma = None
            if noise > 0:
                y = y + rng.normal(0, noise, y.shape)
                sigma = np.full_like(y, noise)
            curves.append(
                CoherenceTrace(t, y, sigma, kind="relaxation_population", meta={"prep": prep, "read": read})
            )
    return curves


@dataclass
class RelaxationFit:
    """Joint fit of the nine curves with the derived eigen-analysis."""

    result: FitResult
    rates: RateMatrix
    eigenvalues: tuple
    t1: float
    identifiable: bool

    def to_dict(self):
        p, s = self.result.params, self.result.sigmas
        return {
            "rates_khz": {k: p[k] for k in ("gamma_p1", "gamma_m1", "gamma_2")},
            "sigmas_khz": {k: s[k] for k in ("gamma_p1", "gamma_m1", "gamma_2")},
            "eigenvalues_khz": [x / KHZ for x in self.eigenvalues],
            "t1_us": self.t1 * 1e6,
            "identifiable": self.identifiable,
            "fit": self.result.to_dict(),
        }


def _label(curve):
    return f"{curve.meta['prep']}_{curve.meta['read']}".replace("-", "m")


def fit_relaxation_joint(
    curves: Sequence[CoherenceTrace],
    init_rates_khz: Sequence[float],
    nuisance=False,
    fixed: Optional[Mapping[str, float]] = None,
    max_iter=500,
) -> RelaxationFit:
    """Fit shared rates (kHz) to all curves with one chi^2.

    Each curve needs ``meta['prep']`` and ``meta['read']`` in {+1, 0, -1}
    and ``x`` in seconds.  With ``nuisance`` every curve also gets an
    amplitude and an offset, y = amp * p_read(t) + off.  Curves without
    sigma are weighted equally and the covariance is rescaled by the
    reduced chi^2.
    """
    if not curves:
        raise ValueError("no curves to fit")
    for c in curves:
        if c.meta.get("prep") not in _INDEX or c.meta.get("read") not in _INDEX:
            raise ValueError("every curve needs prep and read labels in {+1, 0, -1}")
    weighted = all(c.sigma is not None for c in curves)
    names = ["gamma_p1", "gamma_m1", "gamma_2"]
    init = dict(zip(names, (float(g) for g in init_rates_khz)))
    hi = max(10 * max(init.values()), 1.0)
    bounds = {n: (0.0, hi) for n in names}
    if nuisance:
        for c in curves:
            lab = _label(c)
            names += [f"amp_{lab}", f"off_{lab}"]
            init[f"amp_{lab}"], init[f"off_{lab}"] = 1.0, 0.0
            bounds[f"amp_{lab}"], bounds[f"off_{lab}"] = (0.2, 5.0), (-1.0, 1.0)

    def residual(p):
        rm = RateMatrix.from_khz(p["gamma_p1"], p["gamma_m1"], p["gamma_2"])
        lam, v = _eig(rm)
        out = []
        for c in curves:
            start = v[_INDEX[c.meta["prep"]]]
            model = (np.exp(np.multiply.outer(c.x, lam)) * start) @ v[_INDEX[c.meta["read"]]]
            if nuisance:
                lab = _label(c)
                model = p[f"amp_{lab}"] * model + p[f"off_{lab}"]
            r = c.y - model
            out.append(r / c.sigma if weighted else r)
        return np.concatenate(out)

    result = least_squares(
        residual, names, init, bounds, fixed=fixed, weighted=weighted, max_iter=max_iter, kind="relaxation"
    )
    rm = RateMatrix.from_khz(*(result.params[n] for n in ("gamma_p1", "gamma_m1", "gamma_2")))
    identifiable = all(
        result.sigmas[n] <= result.params[n] for n in ("gamma_p1", "gamma_m1", "gamma_2") if n in result.free
    )
    return RelaxationFit(result, rm, eigen_rates(rm), effective_t1(rm), identifiable)
