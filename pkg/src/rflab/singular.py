"""Regular/singular classification of points near a finite-time singularity.

Given a trajectory with a singular time estimate T:

- `good_times` picks checkpoints t where the L^{2+alpha^3} Ricci integral on
  B(x, K_i sqrt(T - t)) is at most eps_i. The schedule level i of a time is
  the number of factors `level_ratio` by which T - t has shrunk since the
  start, and K_i = k_base * ratio^i, eps_i = eps_base * ratio^-i;
- `classify_point` tests |Rm|^2 smallness on B(x, 4 R sqrt(T - t)) at those
  times;
- `cluster_singular` greedily collects separated points of concentrated
  curvature at one time;
- `ct_decay_audit` measures sup (t - t_a) |Rm| on a region.

Curvature is independent of the fibre angle, so scans run along the axis.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import CoverageError, NeedsSingularTimeError, ParameterError
from .flow import Trajectory
from .geometry import (
    BallSpec,
    QuotientPoint,
    QuotientResolution,
    WarpedMetric,
    ball_integral,
    curvature,
    pole_of,
    rescale,
    sphere_area,
)
from .reports import EstimateReport

logger = logging.getLogger(__name__)

CLUSTER_RESOLUTION = QuotientResolution(s_nodes=33, alpha_nodes=33)
RESOLVED_CELLS = 4

Verdict = Literal["regular", "singular", "undetermined"]


@dataclass(frozen=True)
class ClassificationParams:
    eps0: float = 1.0
    R_big: float = 1.0
    alpha: float = 0.05
    Lambda: float = 2.0
    k_base: float = 1.0
    eps_base: float = 1.0
    schedule_ratio: float = 2.0
    level_ratio: float = 16.0
    separation_base: float = 16.0
    separation_ratio: float = 2.0

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not value > 0.0:
                raise ParameterError(f"{name} must be positive, got {value}")
        if self.schedule_ratio <= 1.0 or self.level_ratio <= 1.0 or self.separation_ratio < 1.0:
            raise ParameterError("schedule ratios must exceed 1")

    def schedule(self, i: int) -> tuple[float, float]:
        """(K_i, eps_i)."""
        return self.k_base * self.schedule_ratio**i, self.eps_base * self.schedule_ratio ** (-i)

    def separation(self, index: int) -> float:
        """N(i)."""
        return self.separation_base * self.separation_ratio**index


@dataclass
class PointVerdict:
    point: QuotientPoint
    verdict: Verdict
    witness_times: list[float] = field(default_factory=list)
    integrals: list[tuple[float, float, float]] = field(default_factory=list)

    def record(self) -> dict:
        """JSON-lines form."""
        return {
            "s": self.point.s,
            "alpha": self.point.alpha,
            "verdict": self.verdict,
            "witness_times": self.witness_times,
            "integrals": [list(x) for x in self.integrals],
        }


def _singular_time(traj: Trajectory) -> float:
    if len(traj) == 0:
        raise ParameterError("empty trajectory")
    T = traj.singular_time_estimate
    if T is None:
        raise NeedsSingularTimeError("trajectory has no singular time estimate")
    return T


def _level(T: float, t0: float, t: float, ratio: float) -> int:
    return max(0, int(math.floor(math.log((T - t0) / (T - t)) / math.log(ratio))))


def _located(m: WarpedMetric, x: QuotientPoint, origin: WarpedMetric) -> QuotientPoint:
    """x on the metric m; a pole of the first checkpoint stays that pole."""
    pole = pole_of(origin, x)
    if pole == 1:
        return QuotientPoint(m.length, x.alpha)
    if pole == 0:
        return QuotientPoint(0.0, x.alpha)
    if x.s > m.length:
        raise CoverageError(f"s = {x.s} beyond the axis length {m.length:.6g} at t = {m.time:.6g}")
    return x


def _local_cell(m: WarpedMetric, s: float) -> float:
    j = int(np.clip(np.searchsorted(m.s, s), 1, m.s.size - 1))
    return float(m.s[j] - m.s[j - 1])


def good_times(traj: Trajectory, x: QuotientPoint, params: ClassificationParams) -> list[float]:
    """Checkpoints t < T with int_{B(x, K_i sqrt(T-t))} |Ric|^{2+alpha^3} <= eps_i."""
    T = _singular_time(traj)
    t0 = traj.start
    origin = traj.checkpoints[0]
    q = 2.0 + params.alpha**3
    accepted = []
    for m in traj.checkpoints:
        t = m.time
        if not t < T:
            break
        i = _level(T, t0, t, params.level_ratio)
        K, eps = params.schedule(i)
        p = _located(m, x, origin)
        value = ball_integral(m, BallSpec(p, K * math.sqrt(T - t)), curvature(m).ric_norm**q)
        if value <= eps:
            accepted.append(t)
    logger.debug("point s=%.4g: %d good times", x.s, len(accepted))
    return accepted


def classify_point(traj: Trajectory, x: QuotientPoint, params: ClassificationParams) -> PointVerdict:
    """regular / singular / undetermined from |Rm|^2 on B(x, 4 R sqrt(T - t))."""
    T = _singular_time(traj)
    origin = traj.checkpoints[0]
    good = good_times(traj, x, params)
    candidates = good if good else [float(t) for t in traj.times if t < T]
    q = 2.0 + params.alpha**3
    integrals = []
    witnesses = []
    resolved = 0
    for t in candidates:
        m = traj.metric_at(t)
        p = _located(m, x, origin)
        radius = 4.0 * params.R_big * math.sqrt(T - t)
        if radius < RESOLVED_CELLS * _local_cell(m, p.s):
            continue
        resolved += 1
        b = BallSpec(p, radius)
        cf = curvature(m)
        rm2 = ball_integral(m, b, cf.rm_norm**2)
        ric = ball_integral(m, b, cf.ric_norm**q)
        integrals.append((t, rm2, ric))
        if good and rm2 <= params.eps0:
            witnesses.append(t)
    verdict: Verdict
    if witnesses:
        verdict = "regular"
    elif resolved > 0:
        verdict = "singular"
    else:
        verdict = "undetermined"
    return PointVerdict(point=x, verdict=verdict, witness_times=witnesses, integrals=integrals)


def cluster_singular(
    traj: Trajectory,
    t_i: float,
    params: ClassificationParams,
    index: int = 0,
    resolution: QuotientResolution = CLUSTER_RESOLUTION,
) -> list[QuotientPoint]:
    """Greedy centres p_j on the axis with int_{B(p_j, Lambda sqrt(T - t_i))} |Rm|^2 > eps0.

    Candidates are visited by descending ball integral and accepted when at
    least N(index) sqrt(T - t_i) away from every accepted centre. Along the
    axis meridian the distance is exactly |s_j - s_k|. Nodes whose slab
    integral over |s - s_j| <= radius already stays below eps0 are pruned.
    """
    T = _singular_time(traj)
    if not t_i < T:
        raise ParameterError(f"t_i = {t_i} not below T = {T}")
    m = traj.metric_at(t_i)
    scale = math.sqrt(T - t_i)
    radius = params.Lambda * scale
    gap = params.separation(index) * scale
    density = curvature(m).rm_norm ** 2
    s = m.s
    weights = sphere_area(m.dim - 1) * density * m.psi ** (m.dim - 1)
    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (weights[1:] + weights[:-1]) * np.diff(s))])
    slab = np.interp(s + radius, s, cumulative) - np.interp(s - radius, s, cumulative)
    scored = []
    for j in np.nonzero(slab > params.eps0)[0]:
        value = ball_integral(m, BallSpec(QuotientPoint(float(s[j])), radius), density, resolution)
        if value > params.eps0:
            scored.append((-value, int(j)))
    scored.sort()
    centres: list[QuotientPoint] = []
    for _, j in scored:
        if all(abs(s[j] - c.s) >= gap for c in centres):
            centres.append(QuotientPoint(float(s[j])))
    logger.info("t_i=%.6g: %d cluster centres from %d candidates", t_i, len(centres), len(scored))
    return centres


def ct_decay_audit(
    traj: Trajectory,
    region: BallSpec,
    window: tuple[float, float],
    c0: float,
) -> EstimateReport:
    """sup over the window of (t - t_a) |Rm| on the region, against c0."""
    t_a, t_b = window
    if not t_a < t_b:
        raise ParameterError("window needs t_a < t_b")
    if not traj.covers(t_a, t_b):
        raise CoverageError(f"window [{t_a}, {t_b}] not covered by [{traj.start}, {traj.end}]")
    origin = traj.checkpoints[0]
    pole = pole_of(origin, region.center)
    worst, where = 0.0, t_a
    for t in traj.nodes(t_a, t_b):
        m = traj.metric_at(float(t))
        if pole is None and region.center.s > m.length:
            raise CoverageError(f"region centre leaves the axis at t = {t:.6g}")
        if pole == 0:
            near = m.s <= region.radius
        elif pole == 1:
            near = m.length - m.s <= region.radius
        else:
            near = np.abs(m.s - region.center.s) <= region.radius
        value = (t - t_a) * float(np.max(curvature(m).rm_norm[near]))
        if value > worst:
            worst, where = value, float(t)
    return EstimateReport.build(
        "ct-decay",
        "|Rm| <= c0 / (t - t_a)",
        "upper",
        worst,
        c0,
        {"t_a": t_a, "t_b": t_b, "argmax_time": where},
        time=t_b,
        center=region.center,
        radius=region.radius,
    )


def parabolic_rescale(traj: Trajectory, t_i: float) -> Trajectory:
    """g_i(tau) = (T - t_i)^{-1} g((T - t_i)(tau + 1) + t_i) on checkpoints t >= t_i."""
    T = _singular_time(traj)
    if not t_i < T:
        raise ParameterError(f"t_i = {t_i} not below T = {T}")
    scale = T - t_i
    kept = [m for m in traj.checkpoints if m.time >= t_i]
    if not kept:
        raise CoverageError(f"no checkpoint at or after t_i = {t_i}")
    checkpoints = []
    for m in kept:
        g = rescale(m, 1.0 / scale)
        checkpoints.append(g.with_arrays(g.phi, g.psi, (m.time - t_i) / scale - 1.0))
    return Trajectory(
        checkpoints=checkpoints,
        times=np.array([c.time for c in checkpoints]),
        singular_time_estimate=0.0,
        stop_reason=traj.stop_reason,
        steps=traj.steps,
        settings=dict(traj.settings),
    )


__all__ = [
    "ClassificationParams",
    "PointVerdict",
    "classify_point",
    "cluster_singular",
    "ct_decay_audit",
    "good_times",
    "parabolic_rescale",
]
