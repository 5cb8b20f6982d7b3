"""
RMS fields of statistically polarised nuclear layers, depth and thickness
calibration, and the voxel map of where the detected signal comes from.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import CONSTANTS, DomainError, NucleusSpec, SensorParams

__all__ = [
    "LayerSpec",
    "DepthThickness",
    "GridSpec",
    "VolumeMap",
    "DetectionVolume",
    "GridResolutionWarning",
    "angular_prefactor",
    "dipolar_constant",
    "brms_layer",
    "depth_from_brms",
    "depth_thickness_two_species",
    "spin_field_variance",
    "volume_map",
]


class GridResolutionWarning(UserWarning):
    """The voxel sum misses the analytic layer value by more than 2 %."""


@dataclass(frozen=True)
class LayerSpec:
    """Nuclear layer starting ``standoff_d`` above the sensor, ``thickness_t`` thick (may be inf)."""

    nucleus: NucleusSpec
    standoff_d: float
    thickness_t: float = math.inf

    def __post_init__(self):
        if not self.standoff_d > 0:
            raise DomainError("standoff_d must be positive")
        if not self.thickness_t >= 0:
            raise DomainError("thickness_t must be non-negative")


def angular_prefactor(alpha):
    """pi * (8 - 3 sin^4 alpha) / 128 for a sensor tilted by ``alpha`` from the normal."""
    return math.pi * (8 - 3 * math.sin(alpha) ** 4) / 128


def dipolar_constant(gamma):
    """mu0 * hbar * gamma / (4 pi), in T m^3."""
    return CONSTANTS.mu0_over_4pi * CONSTANTS.hbar * gamma


def _layer_geometry(d, t):
    if math.isinf(t):
        return 1 / d**3
    return 1 / d**3 - 1 / (d + t) ** 3


def brms_layer(layer: LayerSpec, alpha) -> float:
    """RMS field (T) on the sensor axis from a uniformly dense layer."""
    nuc = layer.nucleus
    b2 = (
        nuc.density
        * dipolar_constant(nuc.gamma) ** 2
        * angular_prefactor(alpha)
        * _layer_geometry(layer.standoff_d, layer.thickness_t)
    )
    return math.sqrt(max(b2, 0.0))


def depth_from_brms(b_rms, nucleus: NucleusSpec, alpha) -> float:
    """Sensor depth (m) from the RMS field of a semi-infinite nuclear bath."""
    if not b_rms > 0:
        raise DomainError(f"b_rms must be positive, got {b_rms}")
    k = nucleus.density * dipolar_constant(nucleus.gamma) ** 2 * angular_prefactor(alpha)
    return (k / b_rms**2) ** (1 / 3)


@dataclass(frozen=True)
class DepthThickness:
    depth: float
    thickness: float

    @property
    def physical(self) -> bool:
        """False when the inputs imply a non-positive layer thickness."""
        return self.thickness > 0


def depth_thickness_two_species(b_h, b_f, h: NucleusSpec, f: NucleusSpec, alpha) -> DepthThickness:
    """Depth and thickness of a thin layer of species ``h`` covered by a
    semi-infinite bath of species ``f``.

    The depth follows from the sum of both contributions expressed in
    units of the ``h`` layer; the top of the ``h`` layer follows from the
    ``f`` field alone.  A thickness <= 0 is returned as-is and flagged by
    :attr:`DepthThickness.physical`.
    """
    if not (b_h > 0 and b_f > 0):
        raise DomainError("both RMS fields must be positive")
    ang = angular_prefactor(alpha)
    k_h = h.density * dipolar_constant(h.gamma) ** 2 * ang
    k_f = f.density * dipolar_constant(f.gamma) ** 2 * ang
    denom = b_h**2 + b_f**2 * (h.gamma / f.gamma) ** 2 * (h.density / f.density)
    d = (k_h / denom) ** (1 / 3)
    t = (k_f / b_f**2) ** (1 / 3) - d
    return DepthThickness(d, t)


def spin_field_variance(r_vec, axis, gamma):
    """Field statistics of one spin-1/2 at displacement ``r_vec`` (m, last axis xyz) from the sensor.

    Returns ``(static_plus_larmor, larmor)``: the total equal-time
    <B_z^2> and the part of it oscillating at the Larmor frequency, both
    in T^2.  Only the oscillating part is seen by a decoupling filter.
    """
    r_vec = np.asarray(r_vec, dtype=float)
    r2 = np.sum(r_vec**2, axis=-1)
    nz2 = (r_vec @ np.asarray(axis, dtype=float)) ** 2 / r2
    b2 = dipolar_constant(gamma) ** 2 / r2**3
    larmor = b2 / 4 * 9 * (1 - nz2) * nz2
    static = b2 / 4 * (1 - 3 * nz2) ** 2
    return static + larmor, larmor


@dataclass(frozen=True)
class GridSpec:
    """Cubic voxel lattice above the surface.  Lengths in m."""

    voxel: float
    lateral_extent: float
    height_extent: float

    @classmethod
    def for_depth(cls, depth, voxel=None):
        # 0.1 nm at the 2 nm reference depth; scale-free elsewhere
        return cls(voxel or depth / 20, 15 * depth, 15 * depth)


@dataclass(frozen=True)
class DetectionVolume:
    fraction: float
    volume: float
    edge: float
    spins: float

    @property
    def polarized_equivalent(self) -> float:
        """Number of fully polarised spins giving the same RMS signal."""
        return math.sqrt(self.spins)


@dataclass(frozen=True, eq=False)
class VolumeMap:
    """Result of :func:`volume_map`.

    ``total`` and ``larmor_total`` are the voxel sums of the full and of
    the Larmor-oscillating per-spin variance.  ``cube_edges`` and
    ``cube_fraction`` tabulate the share of the full signal inside a cube
    resting on the surface, centred above the sensor.  ``iso_volume`` and
    ``iso_fraction`` tabulate the same share for the smallest region
    (strongest voxels first).
    """

    depth: float
    alpha: float
    density: float
    voxel: float
    axis_xy: np.ndarray
    axis_z: np.ndarray
    total: float
    larmor_total: float
    analytic: float
    cube_edges: np.ndarray
    cube_fraction: np.ndarray
    iso_volume: np.ndarray
    iso_fraction: np.ndarray
    xz_slice: np.ndarray
    xy_slice: np.ndarray
    weights: Optional[np.ndarray] = None

    @property
    def closure(self) -> float:
        """Voxel sum of the Larmor part over the analytic layer value."""
        if self.analytic == 0:
            return 1.0 if self.larmor_total == 0 else math.inf
        return self.larmor_total / self.analytic

    def detection_volume(self, fraction=0.7) -> DetectionVolume:
        """Smallest region holding ``fraction`` of the signal."""
        v = float(np.interp(fraction, self.iso_fraction, self.iso_volume))
        return DetectionVolume(fraction, v, v ** (1 / 3), self.density * v)

    def cube_volume(self, fraction=0.7) -> DetectionVolume:
        """Surface cube grown until it holds ``fraction`` of the signal."""
        edge = float(np.interp(fraction, self.cube_fraction, self.cube_edges))
        return DetectionVolume(fraction, edge**3, edge, self.density * edge**3)

    def write_slices_csv(self, path):
        """x, y, z (nm from the surface projection of the sensor) and weight (T^2)
        for the y = 0 plane and for the voxel layer touching the surface."""
        xs = self.axis_xy * 1e9
        zs = self.axis_z * 1e9
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["plane", "x_nm", "y_nm", "z_nm", "weight_t2"])
            for i, x in enumerate(xs):
                for k, z in enumerate(zs):
                    w.writerow(["xz", repr(float(x)), "0.0", repr(float(z)), repr(float(self.xz_slice[i, k]))])
            for i, x in enumerate(xs):
                for j, y in enumerate(xs):
                    w.writerow(["xy", repr(float(x)), repr(float(y)), repr(float(zs[0])), repr(float(self.xy_slice[i, j]))])

    def write_cumulative_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["construction", "edge_nm", "volume_nm3", "fraction", "spins"])
            for v, f in zip(self.iso_volume, self.iso_fraction):
                w.writerow(["iso", repr(float(v ** (1 / 3) * 1e9)), repr(float(v * 1e27)), repr(float(f)), repr(float(self.density * v))])
            for e, f in zip(self.cube_edges, self.cube_fraction):
                w.writerow(["cube", repr(float(e * 1e9)), repr(float(e**3 * 1e27)), repr(float(f)), repr(float(self.density * e**3))])


_ISO_DECADES = 16
_ISO_BINS = 160_000


def volume_map(sensor: SensorParams, nucleus: NucleusSpec, grid: Optional[GridSpec] = None, keep_weights=False) -> VolumeMap:
    """Per-voxel field variance of a semi-infinite bath above a shallow sensor.

    The sensor sits ``sensor.depth_d`` below the origin of the surface,
    its axis tilted by ``sensor.alpha`` in the x-z plane.  The voxel weight
    is density * dV * <B_z^2>.  Slabs of constant height are summed one at
    a time, so memory stays at one slab unless ``keep_weights`` is set.
    """
    d = sensor.depth_d
    grid = grid or GridSpec.for_depth(d)
    h = grid.voxel
    if h > d / 10 * (1 + 1e-12):
        raise DomainError("voxel edge must not exceed depth/10")
    n_lat = int(round(grid.lateral_extent / h))
    xs = np.arange(-n_lat, n_lat + 1) * h
    zs = (np.arange(int(round(grid.height_extent / h))) + 0.5) * h
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    axis = sensor.axis
    dv = h**3
    rho = nucleus.density
    scale = dipolar_constant(nucleus.gamma) ** 2 / d**6  # b^2 at r = d

    cube_edges = np.arange(1, 2 * n_lat + 2) * h
    cube_hist = np.zeros(cube_edges.size + 1)
    lateral_key = np.maximum(2 * np.abs(X), 2 * np.abs(Y))

    iso_w = np.zeros(_ISO_BINS + 1)
    iso_n = np.zeros(_ISO_BINS + 1)
    # the strongest voxel is the one straight above the sensor
    w_top = None

    total = 0.0
    larmor_total = 0.0
    xz = np.zeros((xs.size, zs.size))
    xy = None
    weights = np.zeros((xs.size, xs.size, zs.size)) if keep_weights else None
    j0 = n_lat

    for k, z in enumerate(zs):
        r_vec = np.stack([X, Y, np.full_like(X, z + d)], axis=-1)
        full, larmor = spin_field_variance(r_vec, axis, nucleus.gamma)
        w = rho * dv * full
        total += float(w.sum())
        larmor_total += float((rho * dv * larmor).sum())
        xz[:, k] = w[:, j0]
        if k == 0:
            xy = w.copy()
        if keep_weights:
            weights[:, :, k] = w

        key = np.maximum(lateral_key, z)
        idx = np.searchsorted(cube_edges, key * (1 - 1e-12))
        cube_hist += np.bincount(idx.ravel(), weights=w.ravel(), minlength=cube_hist.size)

        if w_top is None:
            w_top = rho * dv * scale * 4.0  # (1 + 3 n_z^2) b^2 / 4 <= b^2
        if w_top > 0:
            with np.errstate(divide="ignore"):
                lg = -np.log10(w / w_top)
            ib = np.clip((lg / _ISO_DECADES * _ISO_BINS).astype(np.int64), 0, _ISO_BINS)
            iso_w += np.bincount(ib.ravel(), weights=w.ravel(), minlength=_ISO_BINS + 1)
            iso_n += np.bincount(ib.ravel(), minlength=_ISO_BINS + 1)

    analytic = brms_layer(LayerSpec(nucleus, d), sensor.alpha) ** 2
    if total > 0:
        cube_fraction = np.cumsum(cube_hist)[:-1] / total
        keep = iso_n > 0
        iso_volume = np.concatenate([[0.0], np.cumsum(iso_n[keep]) * dv])
        iso_fraction = np.concatenate([[0.0], np.cumsum(iso_w[keep]) / total])
    else:
        cube_fraction = np.zeros(cube_edges.size)
        iso_volume = np.array([0.0, xs.size**2 * zs.size * dv])
        iso_fraction = np.zeros(2)

    vm = VolumeMap(
        depth=d,
        alpha=sensor.alpha,
        density=rho,
        voxel=h,
        axis_xy=xs,
        axis_z=zs,
        total=total,
        larmor_total=larmor_total,
        analytic=analytic,
        cube_edges=cube_edges,
        cube_fraction=cube_fraction,
        iso_volume=iso_volume,
        iso_fraction=iso_fraction,
        xz_slice=xz,
        xy_slice=xy,
        weights=weights,
    )
    if analytic > 0 and abs(vm.closure - 1) > 0.02:
        warnings.warn(
            f"voxel sum differs from the analytic layer value by {100 * (vm.closure - 1):.2f} %",
            GridResolutionWarning,
            stacklevel=2,
        )
    return vm
