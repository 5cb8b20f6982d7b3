"""
Damped Gauss-Newton (Levenberg-Marquardt) least squares with box bounds.

Parameters are mapped to the unit interval of their bounds before
iterating, so finite-difference steps, damping and the step criterion
do not depend on the very different SI magnitudes (rad/s vs. tesla).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "FitError",
    "ParameterDegeneracyError",
    "FitResult",
    "least_squares",
]

LAMBDA_START = 1e-3
LAMBDA_UP = 10.0
LAMBDA_DOWN = 0.3
STEP_TOL = 1e-9
CHI2_TOL = 1e-12
CHI2_STALL = 3
MAX_ITER = 500
_FD_STEP = 1e-6
_LAMBDA_CEIL = 1e16


class FitError(RuntimeError):
    pass


class ParameterDegeneracyError(FitError):
    """The normal matrix is singular.  ``direction`` maps parameter names to
    the components of the (scaled) null-space vector; ``result`` holds the
    best-so-far fit without a covariance."""

    def __init__(self, direction: Mapping[str, float], result=None):
        self.direction = dict(direction)
        self.result = result
        parts = ", ".join(f"{k}: {v:+.3f}" for k, v in self.direction.items() if abs(v) > 1e-3)
        super().__init__(f"parameters are degenerate along ({parts})")


@dataclass
class FitResult:
    params: dict
    sigmas: dict
    covariance: np.ndarray
    free: tuple
    chi2: float
    n_iter: int
    converged: bool
    n_data: int
    weighted: bool = True
    kind: str = "custom"
    history: list = field(default_factory=list, repr=False)

    @property
    def dof(self) -> int:
        return self.n_data - len(self.free)

    @property
    def reduced_chi2(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else math.nan

    def correlation(self) -> np.ndarray:
        s = np.sqrt(np.diag(self.covariance))
        return self.covariance / np.outer(s, s)

    def to_dict(self) -> dict:
        return {
            "model": self.kind,
            "params": {k: float(v) for k, v in self.params.items()},
            "sigmas": {k: float(v) for k, v in self.sigmas.items()},
            "free": list(self.free),
            "covariance": [[float(c) for c in row] for row in self.covariance],
            "chi2": float(self.chi2),
            "reduced_chi2": float(self.reduced_chi2),
            "n_data": int(self.n_data),
            "n_iter": int(self.n_iter),
            "converged": bool(self.converged),
            "weighted": bool(self.weighted),
        }


def _covariance(jac_p, names):
    a = jac_p.T @ jac_p
    s = np.sqrt(np.diag(a))
    if np.any(s == 0):
        i = int(np.argmin(s))
        raise ParameterDegeneracyError({n: float(j == i) for j, n in enumerate(names)})
    c = a / np.outer(s, s)
    evals, evecs = np.linalg.eigh(c)
    if evals[0] <= 1e-13 * evals[-1]:
        v = evecs[:, 0]
        v = v * np.sign(v[np.argmax(np.abs(v))])
        raise ParameterDegeneracyError(dict(zip(names, v.tolist())))
    inv = (evecs / evals) @ evecs.T
    return inv / np.outer(s, s)


def least_squares(
    residual: Callable[[dict], np.ndarray],
    names: Sequence[str],
    init: Mapping[str, float],
    bounds: Mapping[str, tuple],
    fixed: Optional[Mapping[str, float]] = None,
    jac: Optional[Callable[[dict], np.ndarray]] = None,
    weighted=True,
    max_iter=MAX_ITER,
    kind="custom",
) -> FitResult:
    """Minimise sum(residual(p)**2) over the free parameters.

    ``residual`` takes a full parameter dict (free and fixed).  ``jac``,
    if given, returns d residual / d p for the free parameters in
    ``names`` order.  Bounds must be finite for every free parameter;
    steps are clipped into them.  When ``weighted`` is false the
    covariance is scaled by the reduced chi^2.

    The schedule starts the damping at 1e-3, multiplies it by 0.3 after
    an accepted step and by 10 after a rejected one.  The fit has
    converged when a step changes no parameter by more than 1e-9
    relative, or when chi^2 improved by less than 1e-12 relative on three
    consecutive accepted steps.
    """
    fixed = dict(fixed or {})
    free = [n for n in names if n not in fixed]
    lo = np.array([bounds[n][0] for n in free], dtype=float)
    hi = np.array([bounds[n][1] for n in free], dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(hi > lo)):
        raise ValueError("every free parameter needs finite bounds with lo < hi")
    p0 = np.array([init[n] for n in free], dtype=float)
    if np.any(p0 < lo) or np.any(p0 > hi):
        bad = [n for n, v, a, b in zip(free, p0, lo, hi) if not a <= v <= b]
        raise ValueError(f"initial values outside bounds: {bad}")
    span = hi - lo

    def to_params(q):
        p = dict(fixed)
        p.update(zip(free, (lo + q * span).tolist()))
        return p

    def resid(q):
        return np.asarray(residual(to_params(q)), dtype=float)

    def jacobian_q(q, r):
        if jac is not None:
            return np.asarray(jac(to_params(q)), dtype=float) * span
        out = np.empty((r.size, q.size))
        for i in range(q.size):
            dq = np.zeros_like(q)
            if q[i] + _FD_STEP <= 1 and q[i] - _FD_STEP >= 0:
                dq[i] = _FD_STEP
                out[:, i] = (resid(q + dq) - resid(q - dq)) / (2 * _FD_STEP)
            elif q[i] + _FD_STEP <= 1:
                dq[i] = _FD_STEP
                out[:, i] = (resid(q + dq) - r) / _FD_STEP
            else:
                dq[i] = _FD_STEP
                out[:, i] = (r - resid(q - dq)) / _FD_STEP
        return out

    q = (p0 - lo) / span
    r = resid(q)
    if not np.all(np.isfinite(r)):
        raise FitError("residuals are not finite at the initial point")
    chi2 = float(r @ r)
    history = [chi2]
    lam = LAMBDA_START
    stall = 0
    converged = chi2 == 0.0
    n_iter = 0
    J = jacobian_q(q, r)

    while not converged and n_iter < max_iter:
        n_iter += 1
        A = J.T @ J
        g = J.T @ r
        d = np.diag(A).copy()
        d[d <= 0] = max(d.max(), 1.0) * 1e-12
        try:
            step = np.linalg.solve(A + lam * np.diag(d), -g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(A + lam * np.diag(d), -g, rcond=None)[0]
        q_new = np.clip(q + step, 0.0, 1.0)
        dp = (q_new - q) * span
        p_now = lo + q * span
        rel_step = float(np.max(np.abs(dp) / (np.abs(p_now) + span * 1e-12))) if dp.size else 0.0
        r_new = resid(q_new)
        chi2_new = float(r_new @ r_new) if np.all(np.isfinite(r_new)) else math.inf
        if chi2_new < chi2:
            rel_change = (chi2 - chi2_new) / chi2
            q, r, chi2 = q_new, r_new, chi2_new
            history.append(chi2)
            lam *= LAMBDA_DOWN
            stall = stall + 1 if rel_change < CHI2_TOL else 0
            if chi2 == 0.0 or stall >= CHI2_STALL or rel_step < STEP_TOL:
                converged = True
            else:
                J = jacobian_q(q, r)
        else:
            lam *= LAMBDA_UP
            if rel_step < STEP_TOL:
                converged = True
            elif lam > _LAMBDA_CEIL:
                break

    params = to_params(q)
    J = jacobian_q(q, r)
    result = FitResult(
        params=params,
        sigmas={},
        covariance=np.zeros((len(free), len(free))),
        free=tuple(free),
        chi2=chi2,
        n_iter=n_iter,
        converged=converged,
        n_data=int(r.size),
        weighted=weighted,
        kind=kind,
        history=history,
    )
    try:
        cov = _covariance(J / span, free)
    except ParameterDegeneracyError as err:
        err.result = result
        raise
    if not weighted and result.dof > 0:
        cov = cov * chi2 / result.dof
    result.covariance = cov
    sig = np.sqrt(np.diag(cov))
    result.sigmas = {n: 0.0 for n in names}
    result.sigmas.update(zip(free, sig.tolist()))
    return result
