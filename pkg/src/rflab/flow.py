"""Ricci flow of rotationally symmetric metrics.

For g = phi^2 dx^2 + psi^2 g_{S^{n-1}} the Ricci flow dg/dt = -2 Ric in the
fixed-x gauge is the system

    d psi / dt = -psi * Ric_sph = psi_ss - (n - 2)(1 - psi_s^2) / psi,
    d phi / dt = -phi * Ric_rad = (n - 1) phi psi_ss / psi,

advanced here with an explicit two-stage Runge-Kutta (Heun) step. The
time step follows the parabolic limit cfl * min(ds)^2 and the curvature
scale 1 / max|K|; a step that goes non-finite or pushes psi through zero is
retried at half the step.

At a pole psi_ss / psi and (1 - psi_s^2) / psi^2 have the same limit, so the
pole value of K_rad driving phi is the one read off K_sph. Both fields also
carry a sixth-difference Kreiss-Oliger term, DISSIPATION * delta^6 f / (64 ds^2),
which damps grid-scale modes of the fixed-x system and is O(h^4) on smooth
data.

The module also carries:
- the preset catalogue (round sphere, dumbbell, Euclidean cap, capped
  cylinder, perturbed sphere),
- the Trajectory container with interpolation and rescaling,
- the hypothesis monitor for R >= -1 and the L^{n/2+sigma} bound on R.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Literal, Mapping, Optional

import numpy as np

from .errors import (
    InstabilityError,
    InvalidMetricError,
    ParameterError,
    SingularityCrossedError,
)
from .geometry import (
    Grid,
    WarpedMetric,
    curvature,
    rescale,
    scalar_lp,
    sectional_curvatures,
)

logger = logging.getLogger(__name__)

PRESETS: tuple[str, ...] = (
    "round_sphere",
    "dumbbell",
    "euclidean_cap",
    "cylinder_capped",
    "perturbed_sphere",
)

MAX_HALVINGS = 20
SINGULAR_FIT_POINTS = 10
DISSIPATION = 1.0

RegridPolicy = Literal["none", "fixed"]


class StopReason(str, Enum):
    MIN_PSI = "min-psi"
    MAX_RM = "max-rm"
    MAX_STEPS = "max-steps"
    T_MAX = "t-max"
    SINGULARITY_CROSSED = "singularity-crossed"
    STATIC = "static"


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def smooth_step(u: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(u > 0.0, np.exp(-1.0 / np.where(u > 0.0, u, 1.0)), 0.0)
        b = np.where(u < 1.0, np.exp(-1.0 / np.where(u < 1.0, 1.0 - u, 1.0)), 0.0)
    return a / (a + b)


def _param(params: Mapping[str, Any], key: str, default: float) -> float:
    try:
        return float(params.get(key, default))
    except (TypeError, ValueError) as exc:
        raise ParameterError(f"preset parameter {key!r} must be a number") from exc


def _round_sphere(grid: Grid, params: Mapping[str, Any], dim: int) -> WarpedMetric:
    rho = _param(params, "radius", 1.0)
    if rho <= 0.0:
        raise ParameterError("round_sphere radius must be positive")
    x = grid.x
    return WarpedMetric(grid, np.full_like(x, math.pi * rho), rho * np.sin(math.pi * x), dim=dim)


def _euclidean_cap(grid: Grid, params: Mapping[str, Any], dim: int) -> WarpedMetric:
    radius = _param(params, "radius", 1.0)
    if radius <= 0.0:
        raise ParameterError("euclidean_cap radius must be positive")
    x = grid.x
    return WarpedMetric(
        grid, np.full_like(x, radius), radius * x, dim=dim, poles=(True, False)
    )


def _dumbbell(grid: Grid, params: Mapping[str, Any], dim: int) -> WarpedMetric:
    rho_b = _param(params, "bulb_radius", 1.0)
    rho_n = _param(params, "neck_radius", 0.2)
    bulbs = int(_param(params, "bulbs", 2))
    neck_length = _param(params, "neck_length", 0.0)
    if bulbs < 2:
        raise ParameterError("dumbbell needs at least two bulbs")
    if not 0.0 < rho_n <= 0.5 * rho_b:
        raise ParameterError("dumbbell needs 0 < neck_radius <= bulb_radius / 2")
    if neck_length < 0.0:
        raise ParameterError("neck_length must be non-negative")
    k = bulbs
    half_cell = 1.0 / (2.0 * k)
    core = math.asin(rho_n / rho_b) / (k * math.pi) + neck_length / (2.0 * k * math.pi * rho_b)
    width = _param(params, "transition", 0.5 * (half_cell - core))
    if width <= 0.0 or core + width >= half_cell:
        raise ParameterError(
            f"neck core {core:.4f} plus transition {width:.4f} must stay below {half_cell:.4f}"
        )
    x = grid.x
    chi = np.zeros_like(x)
    for j in range(1, k):
        d = np.abs(x - j / k)
        chi = np.maximum(chi, 1.0 - smooth_step((d - core) / width))
    bulb = (rho_b * np.sin(k * math.pi * x)) ** 2
    psi = np.sqrt(rho_n**2 + (1.0 - chi) * (bulb - rho_n**2))
    psi[0] = psi[-1] = 0.0
    return WarpedMetric(grid, np.full_like(x, k * math.pi * rho_b), psi, dim=dim)


def _cylinder_capped(grid: Grid, params: Mapping[str, Any], dim: int) -> WarpedMetric:
    c = _param(params, "radius", 1.0)
    cyl = _param(params, "cylinder_length", 2.0)
    if c <= 0.0 or cyl < 0.0:
        raise ParameterError("cylinder_capped needs radius > 0 and cylinder_length >= 0")
    total = math.pi * c + cyl
    u = np.minimum(grid.x, 1.0 - grid.x) * total
    theta = u / c
    chi = smooth_step((theta - math.pi / 4.0) / (math.pi / 4.0))
    psi = c * np.sqrt(np.sin(theta) ** 2 + chi * np.cos(theta) ** 2)
    psi[0] = psi[-1] = 0.0
    return WarpedMetric(grid, np.full_like(grid.x, total), psi, dim=dim)


def _perturbed_sphere(grid: Grid, params: Mapping[str, Any], dim: int) -> WarpedMetric:
    rho = _param(params, "radius", 1.0)
    amp = _param(params, "amplitude", 0.1)
    center = _param(params, "center", 0.5)
    width = _param(params, "width", 0.2)
    if rho <= 0.0 or abs(amp) >= 0.5:
        raise ParameterError("perturbed_sphere needs radius > 0 and |amplitude| < 0.5")
    if width <= 0.0 or center - width <= 0.0 or center + width >= 1.0:
        raise ParameterError("perturbation must stay away from the poles")
    x = grid.x
    u = (x - center) / width
    inside = np.abs(u) < 1.0
    bump = np.zeros_like(x)
    bump[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
    psi = rho * np.sin(math.pi * x) * (1.0 + amp * bump)
    return WarpedMetric(grid, np.full_like(x, math.pi * rho), psi, dim=dim)


_BUILDERS = {
    "round_sphere": _round_sphere,
    "dumbbell": _dumbbell,
    "euclidean_cap": _euclidean_cap,
    "cylinder_capped": _cylinder_capped,
    "perturbed_sphere": _perturbed_sphere,
}

# keys each builder reads; flat configs fold scenario.<key> into params with these
PRESET_PARAMS: Dict[str, tuple[str, ...]] = {
    "round_sphere": ("radius",),
    "dumbbell": ("bulb_radius", "neck_radius", "bulbs", "neck_length", "transition"),
    "euclidean_cap": ("radius",),
    "cylinder_capped": ("radius", "cylinder_length"),
    "perturbed_sphere": ("radius", "amplitude", "center", "width"),
}


def make_preset(
    kind: str,
    params: Optional[Mapping[str, Any]] = None,
    node_count: int = 400,
    dim: int = 4,
) -> WarpedMetric:
    """Build a catalogued initial metric.

    round_sphere{radius}; euclidean_cap{radius};
    dumbbell{bulb_radius, neck_radius, bulbs, neck_length, transition};
    cylinder_capped{radius, cylinder_length};
    perturbed_sphere{radius, amplitude, center, width}.
    """
    builder = _BUILDERS.get(kind)
    if builder is None:
        raise ParameterError(f"unknown preset {kind!r}; available: {', '.join(PRESETS)}")
    try:
        grid = Grid.uniform(int(node_count))
    except InvalidMetricError as exc:
        raise ParameterError(str(exc)) from exc
    m = builder(grid, params or {}, dim)
    # closure and positivity are validated on construction; curvature checks the poles
    curvature(m)
    return m


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------


@dataclass
class FlowController:
    cfl_fraction: float = 0.1
    max_steps: int = 2_000_000
    stop_min_psi: float = 1e-2
    stop_max_rm: float = 1e6
    checkpoint_stride: float = 1e-3
    regrid_policy: RegridPolicy = "none"
    t_max: float = math.inf

    def __post_init__(self) -> None:
        if not 0.0 < self.cfl_fraction <= 0.5:
            raise ParameterError("cfl_fraction must lie in (0, 0.5]")
        if self.max_steps <= 0:
            raise ParameterError("max_steps must be positive")
        for name in ("stop_min_psi", "stop_max_rm", "checkpoint_stride", "t_max"):
            if not getattr(self, name) > 0.0:
                raise ParameterError(f"{name} must be positive")
        if self.regrid_policy not in ("none", "fixed"):
            raise ParameterError(f"unknown regrid_policy {self.regrid_policy!r}")


def _dissipation(f: np.ndarray, poles: tuple[bool, bool], parity: int, ds2: float) -> np.ndarray:
    """DISSIPATION * delta^6 f / (64 ds^2); poles reflect f, open ends get nothing within three nodes."""
    n = f.size
    padded = np.empty(n + 6)
    padded[3:-3] = f
    left = parity * f[[3, 2, 1]] if poles[0] else np.full(3, np.nan)
    right = parity * f[[-2, -3, -4]] if poles[1] else np.full(3, np.nan)
    padded[:3], padded[-3:] = left, right
    d6 = (
        padded[:-6]
        - 6.0 * padded[1:-5]
        + 15.0 * padded[2:-4]
        - 20.0 * padded[3:-3]
        + 15.0 * padded[4:-2]
        - 6.0 * padded[5:-1]
        + padded[6:]
    )
    return np.nan_to_num(DISSIPATION * d6 / (64.0 * ds2), nan=0.0)


def _velocity(m: WarpedMetric, k: Optional[tuple[np.ndarray, np.ndarray]] = None) -> tuple[np.ndarray, np.ndarray]:
    k_rad, k_sph = k if k is not None else sectional_curvatures(m, check_poles=False)
    n = m.dim
    ric_rad = (n - 1) * k_rad
    ric_sph = k_rad + (n - 2) * k_sph
    ds = float(np.min(m.axis.lapse)) * m.grid.h
    dphi = -m.phi * ric_rad + _dissipation(m.phi, m.poles, 1, ds * ds)
    dpsi = -m.psi * ric_sph + _dissipation(m.psi, m.poles, -1, ds * ds)
    # poles keep psi = 0; open ends are held fixed
    dpsi[0] = dpsi[-1] = 0.0
    if not m.poles[0]:
        dphi[0] = 0.0
    if not m.poles[1]:
        dphi[-1] = 0.0
    return dphi, dpsi


def _advance(m: WarpedMetric, phi: np.ndarray, psi: np.ndarray, time: float) -> WarpedMetric:
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
        raise InstabilityError(f"non-finite metric at t = {time:.6g}")
    if np.any(phi <= 0.0):
        raise InstabilityError(f"lapse lost positivity at t = {time:.6g}")
    first = 1 if m.poles[0] else 0
    last = -1 if m.poles[1] else None
    if np.any(psi[first:last] <= 0.0):
        raise SingularityCrossedError(f"psi reached zero in the interior at t = {time:.6g}")
    return m.with_arrays(phi, psi, time)


def _heun(m: WarpedMetric, dt: float, k: Optional[tuple[np.ndarray, np.ndarray]] = None) -> WarpedMetric:
    v1 = _velocity(m, k)
    mid = _advance(m, m.phi + dt * v1[0], m.psi + dt * v1[1], m.time + dt)
    v2 = _velocity(mid)
    return _advance(
        m,
        m.phi + 0.5 * dt * (v1[0] + v2[0]),
        m.psi + 0.5 * dt * (v1[1] + v2[1]),
        m.time + dt,
    )


def step(m: WarpedMetric, dt: float) -> WarpedMetric:
    """One explicit RK2 step of the warped Ricci flow."""
    if dt < 0.0:
        raise ParameterError("dt must be non-negative")
    if dt == 0.0:
        return m
    return _heun(m, dt)


def stable_dt(m: WarpedMetric, cfl: float, k: Optional[tuple[np.ndarray, np.ndarray]] = None) -> float:
    k_rad, k_sph = k if k is not None else sectional_curvatures(m, check_poles=False)
    ds = float(np.min(m.axis.lapse)) * m.grid.h
    kmax = float(max(np.max(np.abs(k_rad)), np.max(np.abs(k_sph)), 1e-12))
    return cfl * min(ds * ds, 1.0 / kmax)


def critical_radius(m: WarpedMetric) -> float:
    """Smallest interior critical value of psi (the neck, or the equator)."""
    psi = m.psi
    d = np.diff(psi)
    left, right = d[:-1], d[1:]
    extrema = ((left >= 0.0) & (right <= 0.0)) | ((left <= 0.0) & (right >= 0.0))
    inner = psi[1:-1][extrema]
    return float(np.min(inner)) if inner.size else math.inf


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    checkpoints: List[WarpedMetric]
    times: np.ndarray
    singular_time_estimate: Optional[float] = None
    stop_reason: str = StopReason.T_MAX.value
    steps: int = 0
    settings: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        if len(self.checkpoints) != self.times.size:
            raise ParameterError("checkpoints and times differ in length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0.0):
            raise ParameterError("trajectory times must be strictly increasing")

    @classmethod
    def static(
        cls,
        m: WarpedMetric,
        times: np.ndarray,
        singular_time: Optional[float] = None,
    ) -> "Trajectory":
        times = np.asarray(times, dtype=float)
        return cls(
            checkpoints=[m.with_arrays(m.phi, m.psi, float(t)) for t in times],
            times=times,
            singular_time_estimate=singular_time,
            stop_reason=StopReason.STATIC.value,
        )

    def __len__(self) -> int:
        return self.times.size

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    def covers(self, a: float, b: float) -> bool:
        tol = 1e-12 * max(1.0, abs(self.end))
        return len(self) > 0 and self.start - tol <= a and b <= self.end + tol

    def metric_at(self, t: float) -> WarpedMetric:
        """Linear interpolation of phi and psi between neighbouring checkpoints."""
        if not self.covers(t, t):
            raise ParameterError(f"t = {t} outside [{self.start}, {self.end}]")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), len(self) - 1)
        if i == len(self) - 1 or t == self.times[i]:
            m = self.checkpoints[i]
            return m if m.time == t else m.with_arrays(m.phi, m.psi, t)
        a, b = self.checkpoints[i], self.checkpoints[i + 1]
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return a.with_arrays((1.0 - w) * a.phi + w * b.phi, (1.0 - w) * a.psi + w * b.psi, t)

    def window(self, a: float, b: float) -> np.ndarray:
        """Indices of checkpoints with a <= t <= b."""
        return np.nonzero((self.times >= a) & (self.times <= b))[0]

    def nodes(self, a: float, b: float) -> np.ndarray:
        """Quadrature nodes for [a, b]: both ends plus every checkpoint strictly inside."""
        if not self.covers(a, b):
            raise ParameterError(f"[{a}, {b}] not inside [{self.start}, {self.end}]")
        inner = self.times[(self.times > a) & (self.times < b)]
        return np.concatenate([[a], inner, [b]]) if b > a else np.array([a])


def estimate_singular_time(times: np.ndarray, radii: np.ndarray) -> Optional[float]:
    """Root of a linear fit of rho^2 over the last checkpoints."""
    ok = np.isfinite(radii)
    t, r = times[ok][-SINGULAR_FIT_POINTS:], radii[ok][-SINGULAR_FIT_POINTS:]
    if t.size < 3:
        return None
    slope, intercept = np.polyfit(t, r**2, 1)
    if slope >= 0.0:
        return None
    return float(-intercept / slope)


def evolve(m0: WarpedMetric, ctl: FlowController) -> Trajectory:
    """Run the flow from m0 until a stop criterion triggers."""
    m = m0
    t = m0.time
    checkpoints = [m0]
    times = [t]
    next_ck = t + ctl.checkpoint_stride
    steps = 0
    reason: StopReason
    while True:
        k = sectional_curvatures(m, check_poles=False)
        n = m.dim
        rm_max = float(
            np.max(np.sqrt(4.0 * (n - 1) * k[0] ** 2 + 2.0 * (n - 1) * (n - 2) * k[1] ** 2))
        )
        if critical_radius(m) < ctl.stop_min_psi:
            reason = StopReason.MIN_PSI
            break
        if rm_max > ctl.stop_max_rm:
            reason = StopReason.MAX_RM
            break
        if t >= ctl.t_max - 1e-14 * max(1.0, ctl.t_max):
            reason = StopReason.T_MAX
            break
        if steps >= ctl.max_steps:
            reason = StopReason.MAX_STEPS
            break
        target = min(next_ck, ctl.t_max)
        dt = min(stable_dt(m, ctl.cfl_fraction, k), target - t)
        snap = dt == target - t
        new: Optional[WarpedMetric] = None
        for _ in range(MAX_HALVINGS):
            try:
                new = _heun(m, dt, k)
                break
            except (InstabilityError, SingularityCrossedError) as exc:
                logger.debug("step failed at t=%.6g (%s), halving dt=%.3g", t, exc, dt)
                dt *= 0.5
                snap = False
                k = sectional_curvatures(m, check_poles=False)
        if new is None:
            reason = StopReason.SINGULARITY_CROSSED
            logger.warning("step size collapsed at t=%.6g", t)
            break
        if snap:
            new = new.with_arrays(new.phi, new.psi, target)
        m = new
        t = m.time
        steps += 1
        if snap and target == next_ck:
            checkpoints.append(m)
            times.append(t)
            next_ck = t + ctl.checkpoint_stride
            logger.debug("checkpoint %d at t=%.6g after %d steps", len(times) - 1, t, steps)

    if times[-1] < t:
        checkpoints.append(m)
        times.append(t)
    radii = np.array([critical_radius(c) for c in checkpoints])
    t_sing = estimate_singular_time(np.asarray(times), radii)
    logger.info(
        "flow stopped (%s) at t=%.6g after %d steps, %d checkpoints, T_sing=%s",
        reason.value,
        t,
        steps,
        len(times),
        "n/a" if t_sing is None else f"{t_sing:.6g}",
    )
    return Trajectory(
        checkpoints=checkpoints,
        times=np.asarray(times),
        singular_time_estimate=t_sing,
        stop_reason=reason.value,
        steps=steps,
        settings={
            "cfl_fraction": ctl.cfl_fraction,
            "max_steps": ctl.max_steps,
            "stop_min_psi": ctl.stop_min_psi,
            "stop_max_rm": ctl.stop_max_rm,
            "checkpoint_stride": ctl.checkpoint_stride,
            "regrid_policy": ctl.regrid_policy,
            "t_max": ctl.t_max,
        },
    )


def rescale_trajectory(traj: Trajectory, C: float) -> Trajectory:
    """g^(t^) = C g(t^ / C)."""
    if not C > 0.0:
        raise ParameterError(f"rescale factor must be positive, got {C}")
    t_sing = traj.singular_time_estimate
    return Trajectory(
        checkpoints=[rescale(m, C) for m in traj.checkpoints],
        times=traj.times * C,
        singular_time_estimate=None if t_sing is None else t_sing * C,
        stop_reason=traj.stop_reason,
        steps=traj.steps,
        settings=dict(traj.settings),
    )


# ---------------------------------------------------------------------------
# Hypothesis monitor
# ---------------------------------------------------------------------------


@dataclass
class HypothesisReport:
    r_min_over_time: float
    lp_sup: float
    sigma: float
    L_bound: float
    first_violation_time: Optional[float]
    passed: bool
    lp_series: np.ndarray = field(default_factory=lambda: np.zeros(0))
    blowup_exponent: Optional[float] = None


def monitor_hypotheses(traj: Trajectory, sigma: float, L: float) -> HypothesisReport:
    """R >= -1 and sup_t of the integral of |R|^{n/2 + sigma}, per checkpoint."""
    if len(traj) == 0:
        raise ParameterError("empty trajectory")
    r_min = math.inf
    lp = np.zeros(len(traj))
    first: Optional[float] = None
    for i, m in enumerate(traj.checkpoints):
        r_here = float(np.min(curvature(m).scalar))
        r_min = min(r_min, r_here)
        lp[i] = scalar_lp(m, m.dim / 2.0 + sigma)
        if first is None and (r_here < -1.0 or lp[i] > L):
            first = float(traj.times[i])
    lp_sup = float(np.max(lp))
    exponent = None
    t_sing = traj.singular_time_estimate
    if t_sing is not None:
        gap = t_sing - traj.times
        ok = (gap > 0.0) & (lp > 0.0)
        if np.count_nonzero(ok) >= 3:
            slope, _ = np.polyfit(np.log(gap[ok]), np.log(lp[ok]), 1)
            exponent = float(-slope)
    return HypothesisReport(
        r_min_over_time=r_min,
        lp_sup=lp_sup,
        sigma=sigma,
        L_bound=L,
        first_violation_time=first,
        passed=r_min >= -1.0 and lp_sup <= L,
        lp_series=lp,
        blowup_exponent=exponent,
    )
