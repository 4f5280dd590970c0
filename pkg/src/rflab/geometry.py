"""Discrete rotationally symmetric metrics and their curvature, distances and volumes.

A metric g = phi(x)^2 dx^2 + psi(x)^2 g_{S^{n-1}} is sampled on a fixed grid
x in [0, 1]. Derivatives are taken in a uniform computational index xi with
fourth-order central stencils and two ghost nodes per end:

- at a pole psi and x are reflected odd, phi is reflected even,
- at an open end (no pole) values are extrapolated with a cubic.

Arclength derivatives use the effective lapse Phi = phi * dx/dxi. The
curvature of a warped product is carried by two sectional curvatures,

    K_rad = -psi_ss / psi,    K_sph = (1 - psi_s^2) / psi^2,

which agree at a smooth pole. There both take the value of the even fit of
K_sph through the three nearest interior nodes. Whole-manifold integrals use
Simpson's rule in xi; balls go through the quotient mesh in `rflab.quotient`
unless centred at a pole, where the exact one-dimensional reduction is used.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.integrate import simpson, trapezoid
from scipy.interpolate import CubicSpline
from scipy.special import gamma as gamma_fn

from . import quotient
from .errors import DegeneratePoleError, DomainError, InvalidMetricError, ParameterError

logger = logging.getLogger(__name__)

POLE_TOLERANCE: float = 0.05
MIN_NODES: int = 16


def sphere_area(k: int) -> float:
    """Area of the unit k-sphere (omega_3 = 2 pi^2, omega_2 = 4 pi)."""
    return float(2.0 * math.pi ** ((k + 1) / 2.0) / gamma_fn((k + 1) / 2.0))


@dataclass(frozen=True, eq=False)
class Grid:
    x: np.ndarray

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=float)
        if x.ndim != 1 or x.size < MIN_NODES:
            raise InvalidMetricError(f"grid needs at least {MIN_NODES} nodes, got {x.size}")
        if x[0] != 0.0 or x[-1] != 1.0:
            raise InvalidMetricError("grid must start at 0 and end at 1")
        if np.any(np.diff(x) <= 0.0):
            raise InvalidMetricError("grid coordinates must be strictly increasing")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @classmethod
    def uniform(cls, node_count: int) -> "Grid":
        return cls(np.linspace(0.0, 1.0, node_count))

    @property
    def node_count(self) -> int:
        return int(self.x.size)

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.x)

    @property
    def h(self) -> float:
        """Spacing of the computational index xi."""
        return 1.0 / (self.node_count - 1)


@dataclass(frozen=True, eq=False)
class WarpedMetric:
    """g = phi^2 dx^2 + psi^2 g_{S^{n-1}} at one time.

    `poles` says which grid ends are poles; an end that is not a pole is an
    open boundary (the Euclidean cap has poles = (True, False)).
    """

    grid: Grid
    phi: np.ndarray
    psi: np.ndarray
    dim: int = 4
    time: float = 0.0
    poles: tuple[bool, bool] = (True, True)

    def __post_init__(self) -> None:
        phi = np.array(self.phi, dtype=float)
        psi = np.array(self.psi, dtype=float)
        n = self.grid.node_count
        if phi.shape != (n,) or psi.shape != (n,):
            raise InvalidMetricError("phi and psi must match the grid")
        if self.dim < 2:
            raise InvalidMetricError(f"dimension must be at least 2, got {self.dim}")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
            raise InvalidMetricError("metric contains non-finite values")
        if np.any(phi <= 0.0):
            raise InvalidMetricError("phi must be positive everywhere")
        first = 1 if self.poles[0] else 0
        last = n - 1 if self.poles[1] else n
        if np.any(psi[first:last] <= 0.0):
            raise InvalidMetricError("psi must be positive away from the poles")
        if self.poles[0]:
            psi[0] = 0.0
        if self.poles[1]:
            psi[-1] = 0.0
        phi.setflags(write=False)
        psi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "poles", (bool(self.poles[0]), bool(self.poles[1])))

    @property
    def closed(self) -> bool:
        return self.poles[0] and self.poles[1]

    @cached_property
    def axis(self) -> "AxisDerivatives":
        return _axis_derivatives(self)

    @cached_property
    def s(self) -> np.ndarray:
        """Arclength from the x = 0 end at every node."""
        xi = np.linspace(0.0, 1.0, self.grid.node_count)
        s = CubicSpline(xi, self.axis.lapse).antiderivative()(xi)
        s[0] = 0.0
        s.setflags(write=False)
        return s

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def with_arrays(self, phi: np.ndarray, psi: np.ndarray, time: float) -> "WarpedMetric":
        return WarpedMetric(
            grid=self.grid, phi=phi, psi=psi, dim=self.dim, time=time, poles=self.poles
        )


@dataclass(frozen=True, eq=False)
class AxisDerivatives:
    lapse: np.ndarray  # Phi = phi dx/dxi
    psi_s: np.ndarray
    psi_ss: np.ndarray


@dataclass(frozen=True, eq=False)
class CurvatureField:
    scalar: np.ndarray
    ric_radial: np.ndarray
    ric_sphere: np.ndarray
    ric_norm: np.ndarray
    rm_norm: np.ndarray
    ric_minus: np.ndarray
    k_radial: np.ndarray
    k_sphere: np.ndarray


@dataclass(frozen=True)
class QuotientPoint:
    s: float
    alpha: float = 0.0


@dataclass(frozen=True)
class BallSpec:
    center: QuotientPoint
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0.0:
            raise ParameterError(f"ball radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class QuotientResolution:
    """Lattice size for balls and distances on the (s, alpha) quotient."""

    s_nodes: int = 81
    alpha_nodes: int = 129

    def scaled(self, k: float) -> "QuotientResolution":
        return QuotientResolution(
            s_nodes=max(int(round(self.s_nodes * k)), 9),
            alpha_nodes=max(int(round(self.alpha_nodes * k)), 9),
        )


DEFAULT_RESOLUTION = QuotientResolution()


@dataclass(frozen=True)
class BallVolume:
    value: float
    saturated: bool = False
    error_bound: float = 0.0


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def _extrapolate(f: np.ndarray, reverse: bool) -> np.ndarray:
    g = f[::-1] if reverse else f
    # cubic through the last four nodes, two steps outward
    e1 = 4.0 * g[-1] - 6.0 * g[-2] + 4.0 * g[-3] - g[-4]
    e2 = 4.0 * e1 - 6.0 * g[-1] + 4.0 * g[-2] - g[-3]
    return np.array([e2, e1]) if reverse else np.array([e1, e2])


def _pad(f: np.ndarray, poles: tuple[bool, bool], parity: int, offset: tuple[float, float]) -> np.ndarray:
    """Two ghost nodes per end: reflection about a pole value, extrapolation otherwise.

    A ghost at a pole is offset + parity * (f_mirror - offset), with the offset
    being the value the reflected quantity is odd about.
    """
    if poles[0]:
        left = offset[0] + parity * (f[[2, 1]] - offset[0])
    else:
        left = _extrapolate(f, reverse=True)
    if poles[1]:
        right = offset[1] + parity * (f[[-2, -3]] - offset[1])
    else:
        right = _extrapolate(f, reverse=False)
    return np.concatenate([left, f, right])


def _d_xi(padded: np.ndarray, h: float) -> np.ndarray:
    return (-padded[4:] + 8.0 * padded[3:-1] - 8.0 * padded[1:-3] + padded[:-4]) / (12.0 * h)


def _axis_derivatives(m: WarpedMetric) -> AxisDerivatives:
    h = m.grid.h
    x_xi = _d_xi(_pad(m.grid.x, m.poles, -1, (0.0, 1.0)), h)
    lapse = m.phi * x_xi
    psi_xi = _d_xi(_pad(m.psi, m.poles, -1, (0.0, 0.0)), h)
    psi_s = psi_xi / lapse
    psi_ss = _d_xi(_pad(psi_s, m.poles, 1, (0.0, 0.0)), h) / lapse
    return AxisDerivatives(lapse=lapse, psi_s=psi_s, psi_ss=psi_ss)


_POLE_WEIGHTS = np.array([1.5, -0.6, 0.1])


def _pole_fill(values: np.ndarray, at_end: bool) -> float:
    """Even fit k0 + k2 xi^2 + k4 xi^4 through the three nodes next to a pole.

    The lapse is even at a pole, so an even function of s is even in xi.
    """
    v = values[[-2, -3, -4]] if at_end else values[[1, 2, 3]]
    return float(_POLE_WEIGHTS @ v)


def sectional_curvatures(m: WarpedMetric, check_poles: bool = True) -> tuple[np.ndarray, np.ndarray]:
    ax = m.axis
    if check_poles:
        for end, is_pole in zip((0, -1), m.poles):
            if is_pole and abs(abs(ax.psi_s[end]) - 1.0) > POLE_TOLERANCE:
                raise DegeneratePoleError(
                    f"|dpsi/ds| = {abs(ax.psi_s[end]):.4f} at pole x = {m.grid.x[end]:g}"
                )
    psi = m.psi
    k_rad = np.empty_like(psi)
    k_sph = np.empty_like(psi)
    inner = psi > 0.0
    k_rad[inner] = -ax.psi_ss[inner] / psi[inner]
    k_sph[inner] = (1.0 - ax.psi_s[inner] ** 2) / psi[inner] ** 2
    # smooth poles have K_rad = K_sph
    for end, is_pole in ((False, m.poles[0]), (True, m.poles[1])):
        if is_pole:
            idx = -1 if end else 0
            k_sph[idx] = k_rad[idx] = _pole_fill(k_sph, end)
    return k_rad, k_sph


def curvature(m: WarpedMetric) -> CurvatureField:
    """Curvature of a warped product from its two sectional curvatures."""
    cached = m.__dict__.get("_curvature")
    if cached is not None:
        return cached
    n = m.dim
    k_rad, k_sph = sectional_curvatures(m)
    ric_rad = (n - 1) * k_rad
    ric_sph = k_rad + (n - 2) * k_sph
    scalar = ric_rad + (n - 1) * ric_sph
    ric_norm = np.sqrt(ric_rad**2 + (n - 1) * ric_sph**2)
    rm_norm = np.sqrt(4.0 * (n - 1) * k_rad**2 + 2.0 * (n - 1) * (n - 2) * k_sph**2)
    ric_minus = np.maximum(0.0, -np.minimum(ric_rad, ric_sph))
    result = CurvatureField(
        scalar=scalar,
        ric_radial=ric_rad,
        ric_sphere=ric_sph,
        ric_norm=ric_norm,
        rm_norm=rm_norm,
        ric_minus=ric_minus,
        k_radial=k_rad,
        k_sphere=k_sph,
    )
    m.__dict__["_curvature"] = result
    return result


# ---------------------------------------------------------------------------
# Integrals
# ---------------------------------------------------------------------------


def _xi(m: WarpedMetric) -> np.ndarray:
    return np.linspace(0.0, 1.0, m.grid.node_count)


def volume_integral(m: WarpedMetric, values: np.ndarray) -> float:
    """Integral of an axis function over the whole manifold."""
    weight = sphere_area(m.dim - 1) * m.psi ** (m.dim - 1) * m.axis.lapse
    return float(simpson(values * weight, x=_xi(m)))


def integral_error(m: WarpedMetric, values: np.ndarray) -> float:
    """Richardson estimate of the Simpson error of `volume_integral`."""
    weight = sphere_area(m.dim - 1) * m.psi ** (m.dim - 1) * m.axis.lapse
    y = values * weight
    xi = _xi(m)
    fine = simpson(y, x=xi)
    coarse = simpson(y[::2], x=xi[::2]) if (xi.size - 1) % 2 == 0 else simpson(
        np.append(y[:-1:2], y[-1]), x=np.append(xi[:-1:2], xi[-1])
    )
    return float(abs(fine - coarse) / 15.0)


def total_volume(m: WarpedMetric) -> float:
    return volume_integral(m, np.ones(m.grid.node_count))


def _check_point(m: WarpedMetric, p: QuotientPoint) -> QuotientPoint:
    length = m.length
    tol = 1e-9 * max(length, 1.0)
    if not (-tol <= p.s <= length + tol):
        raise DomainError(f"s = {p.s} outside [0, {length}]")
    if not (-1e-12 <= p.alpha <= math.pi + 1e-12):
        raise DomainError(f"alpha = {p.alpha} outside [0, pi]")
    return QuotientPoint(s=min(max(p.s, 0.0), length), alpha=min(max(p.alpha, 0.0), math.pi))


def pole_of(m: WarpedMetric, p: QuotientPoint) -> Optional[int]:
    """0 or 1 when p is a pole of m, else None."""
    tol = 1e-9 * max(m.length, 1.0)
    if m.poles[0] and p.s <= tol:
        return 0
    if m.poles[1] and p.s >= m.length - tol:
        return 1
    return None


def _pole_ball_integral(m: WarpedMetric, values: np.ndarray, pole: int, r: float) -> float:
    s = m.s
    spline = CubicSpline(s, values * m.psi ** (m.dim - 1))
    length = m.length
    if pole == 0:
        a, b = 0.0, min(r, length)
    else:
        a, b = max(length - r, 0.0), length
    return sphere_area(m.dim - 1) * float(spline.integrate(a, b))


@dataclass(frozen=True, eq=False)
class BallField:
    """Quotient lattice and distance field of one ball."""

    mesh: quotient.QuotientMesh
    rows: quotient.BallRows


def _eccentricity_bound(m: WarpedMetric, p: QuotientPoint) -> float:
    return max(p.s, m.length - p.s) + math.pi * float(np.max(m.psi))


def ball_field(m: WarpedMetric, b: BallSpec, resolution: QuotientResolution = DEFAULT_RESOLUTION) -> BallField:
    """Distance field of an off-pole ball on a local adaptive lattice."""
    c = _check_point(m, b.center)
    r = b.radius
    length = m.length
    s_lo, s_hi = max(c.s - r, 0.0), min(c.s + r, length)
    window = (m.s >= s_lo) & (m.s <= s_hi)
    psi_lo = float(np.min(m.psi[window])) if np.any(window) else float(np.min(m.psi))
    reaches_pole = (m.poles[0] and s_lo <= 0.0) or (m.poles[1] and s_hi >= length)
    alpha_max = math.pi if reaches_pole or psi_lo <= 0.0 else 1.05 * r / psi_lo
    psi_c = float(CubicSpline(m.s, m.psi)(c.s))
    while True:
        mesh = quotient.build_mesh(
            m.s, m.psi, s_lo, s_hi, alpha_max, resolution.s_nodes, resolution.alpha_nodes
        )
        stop = r + 3.0 * (mesh.hs + float(np.max(mesh.psi)) * mesh.ha)
        dist = quotient.march(mesh, c.s, psi_c, stop=stop)
        rows = quotient.ball_weights(mesh, dist, r, m.dim)
        if not rows.truncated:
            return BallField(mesh=mesh, rows=rows)
        logger.debug("ball lattice truncated at alpha = %.3f, widening", alpha_max)
        alpha_max = min(2.0 * alpha_max, math.pi)


def ball_integral(
    m: WarpedMetric,
    b: BallSpec,
    values: np.ndarray,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> float:
    """Integral over B(center, r) of an axis function sampled on the grid."""
    c = _check_point(m, b.center)
    pole = pole_of(m, c)
    if pole is not None:
        return _pole_ball_integral(m, values, pole, b.radius)
    if b.radius >= _eccentricity_bound(m, c):
        return volume_integral(m, values)
    bf = ball_field(m, b, resolution)
    mesh = bf.mesh
    f = np.interp(mesh.s, m.s, values)
    integrand = sphere_area(m.dim - 2) * f * mesh.psi ** (m.dim - 1) * bf.rows.weights
    return float(trapezoid(integrand, mesh.s))


def ball_volume(
    m: WarpedMetric,
    b: BallSpec,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> BallVolume:
    c = _check_point(m, b.center)
    pole = pole_of(m, c)
    ones = np.ones(m.grid.node_count)
    if pole is not None:
        if b.radius >= m.length:
            return BallVolume(value=total_volume(m), saturated=True)
        return BallVolume(
            value=_pole_ball_integral(m, ones, pole, b.radius),
            error_bound=integral_error(m, ones),
        )
    if b.radius >= _eccentricity_bound(m, c):
        return BallVolume(value=total_volume(m), saturated=True)
    bf = ball_field(m, b, resolution)
    if bf.rows.saturated and bf.mesh.s[0] <= 0.0 and bf.mesh.s[-1] >= m.length:
        return BallVolume(value=total_volume(m), saturated=True)
    mesh = bf.mesh
    integrand = sphere_area(m.dim - 2) * mesh.psi ** (m.dim - 1) * bf.rows.weights
    value = float(trapezoid(integrand, mesh.s))
    # relative radius error of the distance field, raised to the volume's degree
    err = value * m.dim * mesh.error_bound() / b.radius
    return BallVolume(value=value, saturated=False, error_bound=err)


def distance(
    m: WarpedMetric,
    p: QuotientPoint,
    q: QuotientPoint,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> float:
    """Geodesic distance between two quotient points.

    Both points are taken on a common great circle through the reference
    direction, so their relative fibre angle is |alpha_p - alpha_q|. The
    result is symmetric in (p, q) exactly: the march always starts from the
    point with the smaller s.
    """
    p = _check_point(m, p)
    q = _check_point(m, q)
    if (q.s, q.alpha) < (p.s, p.alpha):
        p, q = q, p
    gamma = abs(p.alpha - q.alpha)
    for a, other in ((p, q), (q, p)):
        pole = pole_of(m, a)
        if pole == 0:
            return float(other.s)
        if pole == 1:
            return float(m.length - other.s)
    if gamma == 0.0:
        return float(abs(q.s - p.s))
    spline = CubicSpline(m.s, m.psi)
    psi_p, psi_q = float(spline(p.s)), float(spline(q.s))
    bound = abs(q.s - p.s) + gamma * min(psi_p, psi_q)
    if m.poles[0]:
        bound = min(bound, p.s + q.s)
    if m.poles[1]:
        bound = min(bound, 2.0 * m.length - p.s - q.s)
    s_lo, s_hi = max(p.s - bound, 0.0), min(p.s + bound, m.length)
    mesh = quotient.build_mesh(
        m.s, m.psi, s_lo, s_hi, math.pi, resolution.s_nodes, resolution.alpha_nodes
    )
    dist = quotient.march(mesh, p.s, psi_p, stop=bound + 3.0 * mesh.error_bound())
    return quotient.sample(mesh, dist, q.s, gamma)


def distance_error_bound(m: WarpedMetric, resolution: QuotientResolution = DEFAULT_RESOLUTION) -> float:
    """Documented mesh error of `distance` on a whole-manifold lattice."""
    hs = m.length / (resolution.s_nodes - 1)
    ha = math.pi / (resolution.alpha_nodes - 1)
    return quotient.C_MESH * (hs + float(np.max(m.psi)) * ha)


def distance_field(m: WarpedMetric, center: QuotientPoint, resolution: QuotientResolution = DEFAULT_RESOLUTION
) -> tuple[quotient.QuotientMesh, np.ndarray]:
    """Whole-manifold lattice and distances from `center`."""
    c = _check_point(m, center)
    mesh = quotient.build_mesh(
        m.s, m.psi, 0.0, m.length, math.pi, resolution.s_nodes, resolution.alpha_nodes
    )
    pole = pole_of(m, c)
    if pole is not None:
        dist = quotient.pole_distances(mesh, 0.0 if pole == 0 else m.length)
    else:
        psi_c = float(CubicSpline(m.s, m.psi)(c.s))
        dist = quotient.march(mesh, c.s, psi_c)
    return mesh, dist


# ---------------------------------------------------------------------------
# Curvature norms
# ---------------------------------------------------------------------------


def _region_integral(m: WarpedMetric, values: np.ndarray, region: Optional[BallSpec]) -> float:
    if region is None:
        return volume_integral(m, values)
    return ball_integral(m, region, values)


def scalar_lp(m: WarpedMetric, q: float, region: Optional[BallSpec] = None) -> float:
    if q < 1.0:
        raise ParameterError(f"exponent must be at least 1, got {q}")
    return _region_integral(m, np.abs(curvature(m).scalar) ** q, region)


def riemann_l2(m: WarpedMetric, region: Optional[BallSpec] = None) -> float:
    return _region_integral(m, curvature(m).rm_norm**2, region)


def ricci_lp_ball(m: WarpedMetric, b: BallSpec, q: float) -> float:
    if q < 1.0:
        raise ParameterError(f"exponent must be at least 1, got {q}")
    return ball_integral(m, b, curvature(m).ric_norm**q)


def ricci_minus_lp(m: WarpedMetric, q: float, region: Optional[BallSpec] = None) -> float:
    """Integral of |Ric_-|^q, the negative part of the Ricci curvature."""
    if q < 1.0:
        raise ParameterError(f"exponent must be at least 1, got {q}")
    return _region_integral(m, curvature(m).ric_minus**q, region)


def rescale(m: WarpedMetric, C: float) -> WarpedMetric:
    """C * g, with the time label multiplied by C."""
    if not C > 0.0:
        raise ParameterError(f"rescale factor must be positive, got {C}")
    root = math.sqrt(C)
    return m.with_arrays(m.phi * root, m.psi * root, m.time * C)


def spherical_cap_volume(radius: float, r: float) -> float:
    """Volume of a geodesic ball of radius r in the round 4-sphere of the given radius."""
    theta = min(r / radius, math.pi)
    return 2.0 * math.pi**2 * radius**4 * (2.0 / 3.0 - math.cos(theta) + math.cos(theta) ** 3 / 3.0)


__all__ = [
    "BallSpec",
    "BallVolume",
    "CurvatureField",
    "Grid",
    "QuotientPoint",
    "QuotientResolution",
    "WarpedMetric",
    "ball_integral",
    "ball_volume",
    "curvature",
    "distance",
    "rescale",
    "riemann_l2",
    "ricci_lp_ball",
    "ricci_minus_lp",
    "scalar_lp",
    "total_volume",
]
