"""Volume, curvature-integral and comparison audits.

Formula evaluators (`noncollapse_bound`, `noninflate_bound`, ...) are pure
and bit-for-bit reproducible. Audits evaluate both sides of an inequality
on metric or trajectory data and return `EstimateReport`s. When a constant
is not supplied, the audit fits the minimal constant that makes the
inequality hold and records it in the report parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .errors import CoverageError, ParameterError, PreconditionError
from .flow import Trajectory
from .geometry import (
    DEFAULT_RESOLUTION,
    BallSpec,
    QuotientPoint,
    QuotientResolution,
    WarpedMetric,
    ball_integral,
    ball_volume,
    curvature,
    distance_field,
    pole_of,
    ricci_minus_lp,
    riemann_l2,
    total_volume,
)
from .quotient import count_components
from .reports import EstimateReport
from .spectral import SobolevConstants

logger = logging.getLogger(__name__)

# fitted constants reproduce lhs only up to rounding
FIT_TOLERANCE = 1e-12


# ---------------------------------------------------------------------------
# Constants and windows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NonInflateConstants:
    """Constants of the conjugate heat kernel bounds.

    J(s) = exp(-alpha_J - s beta_J - s sup R_-) enters the lower kernel bound.
    """

    c1: float = 1.0
    c2: float = 1.0
    C0: float = 1.0
    alpha_J: float = 0.0
    beta_J: float = 0.0
    B_low: float = 1.0
    E: float = 0.0
    kappa: float = 1.0

    def __post_init__(self) -> None:
        if not self.c1 > 0.0:
            raise ParameterError("c1 must be positive")
        if self.c2 < 0.0 or self.C0 < 0.0 or self.E < 0.0:
            raise ParameterError("c2, C0 and E must be non-negative")
        if not self.kappa > 0.0:
            raise ParameterError("kappa must be positive")

    def J(self, s: float, sup_r_minus: float = 0.0) -> float:
        return math.exp(-self.alpha_J - s * self.beta_J - s * sup_r_minus)


@dataclass(frozen=True)
class SpaceTimeWindow:
    center: QuotientPoint
    Y: float
    S: float
    V: float
    alpha: float = 0.05

    def __post_init__(self) -> None:
        if not self.S < self.V:
            raise ParameterError(f"window needs S < V, got [{self.S}, {self.V}]")
        if not self.Y >= 1.0:
            raise ParameterError(f"Y must be at least 1, got {self.Y}")
        if not 0.0 < self.alpha < 1.0 / 12.0:
            raise ParameterError(f"alpha must lie in (0, 1/12), got {self.alpha}")

    @property
    def scale_condition(self) -> bool:
        """Y sqrt(V - S) <= 1."""
        return self.Y * math.sqrt(self.V - self.S) <= 1.0 + 1e-12


# ---------------------------------------------------------------------------
# Non-collapsing
# ---------------------------------------------------------------------------


def noncollapse_threshold(A: float, L: float, sigma: float, n: int = 4) -> float:
    """r0 = min(1 / (A^{(n+2 sigma)/(4 sigma)} L^{1/(2 sigma)}), 1)."""
    if not 0.0 < sigma < 1.0:
        raise ParameterError(f"sigma must lie in (0, 1), got {sigma}")
    if not (A > 0.0 and L > 0.0):
        raise ParameterError("A and L must be positive")
    value = 1.0 / (A ** ((n + 2.0 * sigma) / (4.0 * sigma)) * L ** (1.0 / (2.0 * sigma)))
    return min(value, 1.0)


def noncollapse_bound(c: SobolevConstants, n: int, r: float) -> float:
    """(1 / (2^{n+4} A + 4 B))^{n/2} r^n."""
    return (1.0 / (2.0 ** (n + 4) * c.A + 4.0 * c.B)) ** (n / 2.0) * r**n


def noncollapse_bound_general(c: SobolevConstants, n: int, r: float, L: float, sigma: float) -> float:
    """(1 / (2^{n+3} A~ + 2 B~ r^2))^{n/2} r^n with A~, B~ = A, B / (1 - q).

    q = (A / 4) L^{2/(n+2 sigma)} r^{4 sigma/(n+2 sigma)} must stay below 1.
    """
    q = 0.25 * c.A * L ** (2.0 / (n + 2.0 * sigma)) * r ** (4.0 * sigma / (n + 2.0 * sigma))
    if q >= 1.0:
        raise PreconditionError(f"A~ undefined: (A/4) L^.. r^.. = {q:.6g} >= 1")
    a_t = c.A / (1.0 - q)
    b_t = c.B / (1.0 - q)
    return (1.0 / (2.0 ** (n + 3) * a_t + 2.0 * b_t * r**2)) ** (n / 2.0) * r**n


def faber_krahn_volume_bound(Lambda: float, n: int, r: float) -> float:
    """(Lambda / 2^{n+2})^{n/2} r^n."""
    if not Lambda > 0.0:
        raise ParameterError("Faber-Krahn constant must be positive")
    return (Lambda / 2.0 ** (n + 2)) ** (n / 2.0) * r**n


NONCOLLAPSE_REF = "Vol B(x,r) >= (2^{n+4} A + 4 B)^{-n/2} r^n"


def noncollapse_audit(
    m: WarpedMetric,
    c: SobolevConstants,
    L: float,
    sigma: float,
    centers: Sequence[QuotientPoint],
    radii: Sequence[float],
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> list[EstimateReport]:
    n = m.dim
    r0 = noncollapse_threshold(c.A, L, sigma, n)
    R_pow = np.abs(curvature(m).scalar) ** (n / 2.0 + sigma)
    reports = []
    for center in centers:
        for r in radii:
            params = {"A": c.A, "B": c.B, "L": L, "sigma": sigma, "threshold": r0}
            kw = dict(time=m.time, center=center, radius=float(r))
            if r > r0:
                reports.append(
                    EstimateReport.skipped(
                        "noncollapse", NONCOLLAPSE_REF, "lower", f"radius {r} above threshold {r0:.6g}", params, **kw
                    )
                )
                continue
            b = BallSpec(center, float(r))
            lp = ball_integral(m, b, R_pow, resolution)
            params["ball_R_integral"] = lp
            if lp > L:
                reports.append(
                    EstimateReport.skipped(
                        "noncollapse", NONCOLLAPSE_REF, "lower", "integral of |R|^{n/2+sigma} exceeds L", params, **kw
                    )
                )
                continue
            vol = ball_volume(m, b, resolution).value
            reports.append(
                EstimateReport.build("noncollapse", NONCOLLAPSE_REF, "lower", vol, noncollapse_bound(c, n, r), params, **kw)
            )
    return reports


# ---------------------------------------------------------------------------
# Non-inflating
# ---------------------------------------------------------------------------


def noninflate_bound(k: NonInflateConstants, n: int, r: float, t0: float, sup_r_minus: float = 0.0) -> float:
    """(1 + C0 (1+r^2)^{n/2}) c1^{-1} J(t0)^{-1} exp(2 c2 + 2 e^{2 B r^2/n} E^{2/n} / (3 kappa^{2/n})) r^n."""
    if not (r > 0.0 and t0 > 0.0 and r < math.sqrt(t0)):
        raise PreconditionError(f"need 0 < r < sqrt(t0), got r = {r}, t0 = {t0}")
    prefactor = (1.0 + k.C0 * (1.0 + r**2) ** (n / 2.0)) / k.c1 / k.J(t0, sup_r_minus)
    exponent = 2.0 * k.c2 + 2.0 * math.exp(2.0 * k.B_low * r**2 / n) * k.E ** (2.0 / n) / (
        3.0 * k.kappa ** (2.0 / n)
    )
    return prefactor * math.exp(exponent) * r**n


def noninflate_audit(
    traj: Trajectory,
    centers: Sequence[QuotientPoint],
    radii: Sequence[float],
    sigma0: Optional[float] = None,
    sigma1: Optional[float] = None,
    restrict_sqrt_t: bool = False,
    self_similar_time: Optional[float] = None,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> list[EstimateReport]:
    """sigma0 r^n <= Vol B(x, r) <= sigma1 r^n on every checkpoint.

    With `self_similar_time` T, radii and off-pole centres are scaled by
    sqrt((T - t) / (T - t_start)) so that the balls follow the shrinking
    solution. Without sigma1 the fitted sup ratio is used and recorded.
    """
    if len(traj) == 0:
        raise ParameterError("empty trajectory")
    t_first = traj.start
    per_checkpoint: list[tuple[float, list[float], list[tuple[QuotientPoint, float]]]] = []
    for m in traj.checkpoints:
        t = m.time
        scale = 1.0
        if self_similar_time is not None:
            if t >= self_similar_time:
                continue
            scale = math.sqrt((self_similar_time - t) / (self_similar_time - t_first))
        ratios, balls = [], []
        for center in centers:
            if pole_of(traj.checkpoints[0], center) == 1:
                c = QuotientPoint(m.length, center.alpha)
            else:
                c = QuotientPoint(center.s * scale, center.alpha)
            for r0 in radii:
                r = r0 * scale
                if restrict_sqrt_t and not r < math.sqrt(max(t, 0.0)):
                    continue
                vol = ball_volume(m, BallSpec(c, r), resolution).value
                ratios.append(vol / r**m.dim)
                balls.append((c, r))
        if ratios:
            per_checkpoint.append((t, ratios, balls))
    if not per_checkpoint:
        return [
            EstimateReport.skipped("noninflate", "Vol B(x,r) <= sigma1 r^n", "upper", "no admissible ball")
        ]
    sups = np.array([max(rs) for _, rs, _ in per_checkpoint])
    fitted = float(np.max(sups))
    spread = float((np.max(sups) - np.min(sups)) / np.max(sups)) if fitted > 0.0 else 0.0
    reports = []
    for t, ratios, balls in per_checkpoint:
        i_max = int(np.argmax(ratios))
        i_min = int(np.argmin(ratios))
        params = {"sigma1_fit": fitted, "sigma1_spread": spread, "balls": len(ratios)}
        rhs = fitted if sigma1 is None else sigma1
        reports.append(
            EstimateReport.build(
                "noninflate",
                "Vol B(x,r) <= sigma1 r^n",
                "upper",
                ratios[i_max],
                rhs,
                params,
                time=t,
                center=balls[i_max][0],
                radius=balls[i_max][1],
            )
        )
        if sigma0 is not None:
            reports.append(
                EstimateReport.build(
                    "noninflate-lower",
                    "Vol B(x,r) >= sigma0 r^n",
                    "lower",
                    ratios[i_min],
                    sigma0,
                    {"balls": len(ratios)},
                    time=t,
                    center=balls[i_min][0],
                    radius=balls[i_min][1],
                )
            )
    return reports


# ---------------------------------------------------------------------------
# Space-time Ricci integrals
# ---------------------------------------------------------------------------


def _ball_or_zero(m: WarpedMetric, center: QuotientPoint, r: float, values: np.ndarray,
                  resolution: QuotientResolution) -> float:
    if r <= 0.0:
        return 0.0
    return ball_integral(m, BallSpec(center, r), values, resolution)


SPACETIME_REF = "int_S^V int_{B(p, Y sqrt(V-s))} |Ric|^{2+a^3} <= c2 (V-S)^{1+a/16}"


def spacetime_ricci_audit(
    traj: Trajectory,
    w: SpaceTimeWindow,
    c2_hat: Optional[float] = None,
    ladder: int = 6,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> EstimateReport:
    """Audit the weak non-inflating space-time Ricci integral on one window.

    The integral is also evaluated for S_k = V - (V - S) k / ladder and the
    exponent e* of lhs against (V - S_k) is fitted on a log-log scale.
    """
    if not traj.covers(w.S, w.V):
        raise CoverageError(f"window [{w.S}, {w.V}] not covered by [{traj.start}, {traj.end}]")
    if ladder < 2:
        raise ParameterError("ladder needs at least two windows")
    q = 2.0 + w.alpha**3
    starts = w.V - (w.V - w.S) * np.arange(1, ladder + 1) / ladder
    nodes = np.unique(np.concatenate([traj.nodes(w.S, w.V), starts]))
    values = np.empty(nodes.size)
    for i, s in enumerate(nodes):
        m = traj.metric_at(float(s))
        values[i] = _ball_or_zero(
            m, w.center, w.Y * math.sqrt(max(w.V - s, 0.0)), curvature(m).ric_norm**q, resolution
        )
    # tail[i] = integral from nodes[i] to V
    tail = trapezoid(values, nodes) - cumulative_trapezoid(values, nodes, initial=0.0)
    lhs_k = np.interp(starts, nodes, tail)
    lhs = float(lhs_k[-1])
    widths = w.V - starts
    exponent: Optional[float] = None
    degenerate = not np.all(lhs_k > 0.0)
    if not degenerate:
        exponent = float(np.polyfit(np.log(widths), np.log(lhs_k), 1)[0])
    power = 1.0 + w.alpha / 16.0
    fitted = lhs / (w.V - w.S) ** power
    c2 = fitted if c2_hat is None else c2_hat
    params = {
        "Y": w.Y,
        "S": w.S,
        "V": w.V,
        "alpha": w.alpha,
        "c2_fit": fitted,
        "c2": c2,
        "exponent": exponent,
        "degenerate": degenerate,
        "scale_condition": w.scale_condition,
        "ladder_lhs": lhs_k.tolist(),
    }
    logger.debug("space-time Ricci window [%.4g, %.4g]: lhs=%.6g e*=%s", w.S, w.V, lhs, exponent)
    if not w.scale_condition:
        return EstimateReport.skipped(
            "spacetime-ricci", SPACETIME_REF, "upper", "Y sqrt(V-S) > 1", params,
            lhs=lhs, time=w.V, center=w.center,
        )
    return EstimateReport.build(
        "spacetime-ricci", SPACETIME_REF, "upper", lhs, c2 * (w.V - w.S) ** power, params,
        tolerance=FIT_TOLERANCE * abs(lhs) if c2_hat is None else 0.0, time=w.V, center=w.center,
    )


RICCI4_REF = "int_{V-2s}^{V-s} int_B |Ric|^4 <= c1 s^{a-1} + c1 sup|Ric|^2 s^{1+a}"


def _ricci4_window(traj: Trajectory, p: QuotientPoint, r: float, V: float, s: float,
                   resolution: QuotientResolution) -> tuple[float, float]:
    a, b = V - 2.0 * s, V - s
    if not traj.covers(a, b):
        raise CoverageError(f"window [{a}, {b}] not covered by the trajectory")
    nodes = traj.nodes(a, b)
    values = np.empty(nodes.size)
    sup = 0.0
    for i, t in enumerate(nodes):
        m = traj.metric_at(float(t))
        cf = curvature(m)
        values[i] = ball_integral(m, BallSpec(p, r), cf.ric_norm**4, resolution)
        near = np.abs(m.s - p.s) <= r
        if np.any(near):
            sup = max(sup, float(np.max(cf.ric_norm[near] ** 2)))
    return float(trapezoid(values, nodes)), sup


def ricci4_window_audit(
    traj: Trajectory,
    p: QuotientPoint,
    r: float,
    V: float,
    s: float,
    c1_hat: Optional[float] = None,
    alpha: float = 0.05,
    halvings: int = 2,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> EstimateReport:
    """L^4 Ricci integral on [V - 2s, V - s]; the minimal c1 is fitted for s, s/2, ...."""
    if not 0.0 < s < 1.0:
        raise ParameterError(f"s must lie in (0, 1), got {s}")
    if not V - 3.0 * s > 0.0:
        raise ParameterError(f"need V - 3s > 0, got V = {V}, s = {s}")
    fits = []
    first: Optional[tuple[float, float]] = None
    for k in range(halvings + 1):
        sk = s / 2.0**k
        lhs_k, sup_k = _ricci4_window(traj, p, r, V, sk, resolution)
        denom = sk ** (alpha - 1.0) + sup_k * sk ** (1.0 + alpha)
        fits.append(lhs_k / denom)
        if first is None:
            first = (lhs_k, sup_k)
    assert first is not None
    lhs, sup = first
    c1 = fits[0] if c1_hat is None else c1_hat
    top = max(fits)
    params = {
        "V": V,
        "s": s,
        "alpha": alpha,
        "sup_ric2": sup,
        "c1_fit": fits[0],
        "c1": c1,
        "c1_fits": fits,
        "c1_spread": (top - min(fits)) / top if top > 0.0 else 0.0,
    }
    rhs = c1 * (s ** (alpha - 1.0) + sup * s ** (1.0 + alpha))
    tol = FIT_TOLERANCE * abs(lhs) if c1_hat is None else 0.0
    return EstimateReport.build(
        "ricci4-window", RICCI4_REF, "upper", lhs, rhs, params, tolerance=tol, time=V, center=p, radius=r
    )


# ---------------------------------------------------------------------------
# Volume comparison and annuli
# ---------------------------------------------------------------------------


COMPARISON_REF = "f^{1/(2p-1)}(r) - f^{1/(2p-1)}(s) <= C2 r^{1-(n-1)/(2p-1)} ||Ric_-||_p^{p/(2p-1)}"


def _comparison_limit(m: WarpedMetric, center: QuotientPoint) -> float:
    if pole_of(m, center) is not None:
        return m.length
    return min(center.s, m.length - center.s)


def volume_comparison_audit(
    m: WarpedMetric,
    center: QuotientPoint,
    p: float,
    r_ladder: Sequence[float],
    c2: Optional[float] = None,
    area_step: float = 0.02,
    slack: float = 1e-3,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> list[EstimateReport]:
    """Integrated volume comparison for the area ratio f(t) = |S(t)| / t^{n-1}.

    Sphere areas are symmetric differences of ball volumes at r (1 +- area_step).
    Radii at or beyond the cut-locus scale of the centre are dropped and the
    reduction is flagged. When Ric_- vanishes on the largest ball the check
    is plain monotonicity, with `slack` relative to f^{1/(2p-1)}(s).
    """
    n = m.dim
    if not p > n / 2.0:
        raise ParameterError(f"need p > n/2, got p = {p}")
    radii = np.sort(np.asarray(r_ladder, dtype=float))
    if radii.size and radii[0] <= 0.0:
        raise ParameterError("ladder radii must be positive")
    limit = _comparison_limit(m, center)
    keep = radii * (1.0 + area_step) < limit
    reduced = bool(not np.all(keep))
    radii = radii[keep]
    if reduced:
        logger.info("volume comparison ladder reduced to %d radii below %.4g", radii.size, limit)
    if radii.size < 2:
        return [EstimateReport.skipped("volume-comparison", COMPARISON_REF, "upper",
                                       "fewer than two radii below the cut-locus scale",
                                       {"reduced": reduced}, time=m.time, center=center)]

    def vol(r: float) -> float:
        return ball_volume(m, BallSpec(center, r), resolution).value

    areas = np.array([(vol(r * (1 + area_step)) - vol(r * (1 - area_step))) / (2 * area_step * r) for r in radii])
    f = areas / radii ** (n - 1)
    g = np.maximum(f, 0.0) ** (1.0 / (2.0 * p - 1.0))
    norm = ricci_minus_lp(m, p, BallSpec(center, float(radii[-1] * (1 + area_step)))) ** (1.0 / p)
    power = 1.0 - (n - 1.0) / (2.0 * p - 1.0)
    lhs = g[1:] - g[:-1]
    scale = radii[1:] ** power * norm ** (p / (2.0 * p - 1.0))
    if norm > 0.0:
        fitted = float(np.max(np.maximum(lhs, 0.0) / scale))
    else:
        fitted = 0.0
    C2 = fitted if c2 is None else c2
    reports = []
    for k in range(lhs.size):
        params = {
            "p": p,
            "s": float(radii[k]),
            "r": float(radii[k + 1]),
            "c2": C2,
            "c2_fit": fitted,
            "ricci_minus_norm": norm,
            "reduced": reduced,
        }
        if norm == 0.0:
            tol = slack * g[k]
        else:
            tol = FIT_TOLERANCE * abs(float(lhs[k])) if c2 is None else 0.0
        reports.append(
            EstimateReport.build(
                "volume-comparison",
                COMPARISON_REF,
                "upper",
                float(lhs[k]),
                float(C2 * scale[k]),
                params,
                tolerance=tol,
                time=m.time,
                center=center,
                radius=float(radii[k + 1]),
            )
        )
    return reports


@dataclass(frozen=True)
class AnnulusCount:
    count: int
    empty: bool


def annulus_components(
    m: WarpedMetric,
    center: QuotientPoint,
    r_in: float,
    r_out: float,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> AnnulusCount:
    """Connected components of {r_in <= d(center, .) <= r_out} on the quotient lattice."""
    if not r_in < r_out:
        raise ParameterError(f"need r_in < r_out, got {r_in} >= {r_out}")
    mesh, dist = distance_field(m, center, resolution)
    mask = np.isfinite(dist) & (dist >= r_in) & (dist <= r_out)
    if not np.any(mask):
        return AnnulusCount(count=0, empty=True)
    return AnnulusCount(count=count_components(mesh, mask), empty=False)


def annulus_audit(
    m: WarpedMetric,
    center: QuotientPoint,
    r_in: float,
    r_out: float,
    expected: Optional[int] = None,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> EstimateReport:
    """Component count of an annulus; equal to `expected` if given, else at most one."""
    result = annulus_components(m, center, r_in, r_out, resolution)
    params = {"r_in": r_in, "r_out": r_out, "empty": result.empty}
    if expected is None:
        return EstimateReport.build(
            "annulus", "B(x,R) minus B(x,1) is connected", "upper", result.count, 1, params,
            time=m.time, center=center, radius=r_out,
        )
    return EstimateReport.build(
        "annulus", "component count of B(x,R) minus B(x,1)", "equal", result.count, expected, params,
        time=m.time, center=center, radius=r_out,
    )


def neck_hypotheses(
    m: WarpedMetric,
    center: QuotientPoint,
    r: float,
    p: float,
    ric_minus_bound: float,
    v_lower: float,
    v_upper: float,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> list[EstimateReport]:
    """Hypotheses of the annulus connectivity statement on B(center, r)."""
    n = m.dim
    b = BallSpec(center, r)
    integral = ricci_minus_lp(m, p, b)
    vol = ball_volume(m, b, resolution).value
    kw = dict(time=m.time, center=center, radius=r)
    return [
        EstimateReport.build(
            "neck-ricci-minus", "int_B |Ric_-|^p <= bound", "upper", integral, ric_minus_bound, {"p": p}, **kw
        ),
        EstimateReport.build(
            "neck-volume-lower", "Vol B(x,r) >= v r^n", "lower", vol, v_lower * r**n, {"v_lower": v_lower}, **kw
        ),
        EstimateReport.build(
            "neck-volume-upper", "Vol B(x,r) <= v r^n", "upper", vol, v_upper * r**n, {"v_upper": v_upper}, **kw
        ),
    ]


# ---------------------------------------------------------------------------
# Whole-manifold integrals along a trajectory
# ---------------------------------------------------------------------------


def volume_growth_audit(traj: Trajectory, B: float = 1.0) -> list[EstimateReport]:
    """Vol_{g(t)}(M) <= e^{B (t - t0)} Vol_{g(t0)}(M), valid while R >= -B."""
    if len(traj) == 0:
        raise ParameterError("empty trajectory")
    ref = "Vol_{g(t)}(M) <= e^{Bt} Vol_{g(0)}(M)"
    r_min = min(float(np.min(curvature(m).scalar)) for m in traj.checkpoints)
    params = {"B": B, "R_min": r_min}
    if r_min < -B:
        return [EstimateReport.skipped("volume-growth", ref, "upper", f"R_min = {r_min:.6g} < -B", params)]
    v0 = total_volume(traj.checkpoints[0])
    t0 = traj.start
    return [
        EstimateReport.build(
            "volume-growth", ref, "upper", total_volume(m), math.exp(B * (m.time - t0)) * v0, params, time=m.time
        )
        for m in traj.checkpoints
    ]


def riemann_l2_audit(
    traj: Trajectory,
    K0: Optional[float] = None,
    constancy_tol: Optional[float] = None,
) -> list[EstimateReport]:
    """int |Rm|^2 <= K0 per checkpoint, plus an optional constancy row (max - min) / max <= tol."""
    if len(traj) == 0:
        raise ParameterError("empty trajectory")
    values = np.array([riemann_l2(m) for m in traj.checkpoints])
    fitted = float(np.max(values))
    bound = fitted if K0 is None else K0
    reports = [
        EstimateReport.build(
            "riemann-l2", "int_M |Rm|^2 <= K0", "upper", float(v), bound, {"K0": bound, "K0_fit": fitted}, time=float(t)
        )
        for v, t in zip(values, traj.times)
    ]
    if constancy_tol is not None:
        spread = float((values.max() - values.min()) / values.max()) if fitted > 0.0 else 0.0
        reports.append(
            EstimateReport.build(
                "riemann-l2-constancy",
                "(max - min) / max of int_M |Rm|^2 along the flow",
                "upper",
                spread,
                constancy_tol,
                {"min": float(values.min()), "max": fitted},
                time=traj.end,
            )
        )
    return reports


__all__ = [
    "AnnulusCount",
    "NonInflateConstants",
    "SpaceTimeWindow",
    "annulus_audit",
    "annulus_components",
    "faber_krahn_volume_bound",
    "neck_hypotheses",
    "noncollapse_audit",
    "noncollapse_bound",
    "noncollapse_bound_general",
    "noncollapse_threshold",
    "noninflate_audit",
    "noninflate_bound",
    "ricci4_window_audit",
    "riemann_l2_audit",
    "spacetime_ricci_audit",
    "volume_comparison_audit",
    "volume_growth_audit",
]
