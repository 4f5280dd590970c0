"""Heat and conjugate heat equations on evolving warped backgrounds.

Axis functions f(x, t) are advanced on the fixed x grid by a node-centred
finite volume scheme: node j owns the cell between the neighbouring
midpoints, with volume V_j = omega_{n-1} * integral of psi^{n-1} ds, and
exchanges flux with its neighbours through the spheres at the midpoints,

    V_j df_j/dt = sum_k w_{jk} (f_k - f_j),  w = omega_{n-1} psi_mid^{n-1} / ds.

Cell volumes and face weights are taken at every trajectory node inside
the solve window and interpolated linearly in time between them. Steps are
explicit, sized to keep the update a convex combination (hence positive).

Balls and kernels centred off the poles are not rotationally symmetric
about the axis. Their fields live on a material (s, alpha) cell mesh,
uniform in x so that a cell is the same set of points at every time, and
are stepped by backward Euler with the quotient stiffness matrix of
`rflab.spectral`: (V + dt K) f' = V f. The step keeps f non-negative and
conserves the mass sum V f when the ends are insulated.

Also here: the cut-off function with its numerical verification, the Moser
iteration constants and the sup-bound audit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import SuperLU, splu
from scipy.special import expit

from .errors import (
    ConstructionFailedError,
    CoverageError,
    ParameterError,
    PreconditionError,
    SolverError,
)
from .estimates import NonInflateConstants
from .flow import Trajectory, smooth_step
from .geometry import (
    DEFAULT_RESOLUTION,
    BallSpec,
    QuotientPoint,
    QuotientResolution,
    WarpedMetric,
    ball_integral,
    curvature,
    pole_of,
    sphere_area,
)
from .reports import EstimateReport
from .spectral import CellMesh, Domain, cell_distances, cell_mesh, stiffness, whole_domain

logger = logging.getLogger(__name__)

STEP_FRACTION = 0.4
NEGATIVITY_FLOOR = -1e-12
MASS_DRIFT = 1e-9
# (s, alpha) cells of fields centred off the poles, and their backward Euler step
CELL_SHAPE: tuple[int, int] = (96, 64)
IMPLICIT_STEP = 1e-3

FieldKind = Literal["heat", "conjugate", "ricci"]


@dataclass(eq=False)
class HeatField:
    """Field sampled at `times` (ascending), one row per time.

    Axis fields hold f(x, t) on the grid nodes. Fields centred off the poles
    hold f on the material cells of shape `cell_shape`, one (s, alpha)
    array per time.
    """

    times: np.ndarray
    values: np.ndarray
    domain: Optional[BallSpec]
    ell: float
    c0: Optional[float] = None
    volumes: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    kind: FieldKind = "heat"
    source_time: Optional[float] = None
    cell_shape: Optional[tuple[int, int]] = None

    @property
    def on_cells(self) -> bool:
        return self.cell_shape is not None

    def cells_at(self, traj: Trajectory, t: float) -> CellMesh:
        if self.cell_shape is None:
            raise ParameterError("axis fields have no cell mesh")
        return cell_mesh(traj.metric_at(t), *self.cell_shape, material=True)

    def index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise CoverageError(f"t = {t} is not a sample time of the field")
        return i

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation in time."""
        if not self.times[0] - 1e-12 <= t <= self.times[-1] + 1e-12:
            raise CoverageError(f"t = {t} outside [{self.times[0]}, {self.times[-1]}]")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), self.times.size - 1)
        if i == self.times.size - 1:
            return self.values[i]
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def mass(self) -> np.ndarray:
        """Sum of V f over the nodes or cells at every sample time."""
        axes = tuple(range(1, self.values.ndim))
        return np.sum(self.volumes * self.values, axis=axes)


# ---------------------------------------------------------------------------
# Finite volume operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class _Operator:
    volumes: np.ndarray
    weights: np.ndarray
    s: np.ndarray
    length: float


def _operator(m: WarpedMetric) -> _Operator:
    n = m.dim
    s = m.s
    omega = sphere_area(n - 1)
    mid = 0.5 * (s[:-1] + s[1:])
    psi_mid = np.clip(CubicSpline(s, m.psi)(mid), 0.0, None)
    weights = omega * psi_mid ** (n - 1) / np.diff(s)
    prim = CubicSpline(s, m.psi ** (n - 1)).antiderivative()
    edges = np.concatenate([[s[0]], mid, [s[-1]]])
    volumes = omega * np.diff(prim(edges))
    return _Operator(volumes=volumes, weights=weights, s=s, length=m.length)


def _divergence(f: np.ndarray, w: np.ndarray) -> np.ndarray:
    flux = w * np.diff(f)
    div = np.zeros_like(f)
    div[:-1] += flux
    div[1:] -= flux
    return div


def _active(op: _Operator, domain: Optional[BallSpec], pole: Optional[int]) -> np.ndarray:
    if domain is None:
        return np.ones(op.s.size, dtype=bool)
    d = op.s if pole == 0 else op.length - op.s
    return d < domain.radius


def _step_limit(op: _Operator) -> float:
    total = np.zeros_like(op.volumes)
    total[:-1] += op.weights
    total[1:] += op.weights
    return STEP_FRACTION * float(np.min(op.volumes / np.maximum(total, 1e-300)))


def _check(f: np.ndarray, t: float) -> np.ndarray:
    if not np.all(np.isfinite(f)):
        raise SolverError(f"non-finite heat field at t = {t:.6g}")
    low = float(np.min(f))
    if low < NEGATIVITY_FLOOR:
        raise SolverError(f"heat field lost positivity ({low:.3g}) at t = {t:.6g}")
    return np.maximum(f, 0.0)


# ---------------------------------------------------------------------------
# Material cells
# ---------------------------------------------------------------------------


def _material_meshes(metrics: list[WarpedMetric], shape: tuple[int, int]) -> list[CellMesh]:
    """One material mesh per node; runs of identical metrics share theirs."""
    meshes: list[CellMesh] = []
    for k, m in enumerate(metrics):
        prev = metrics[k - 1] if k else None
        if prev is not None and np.array_equal(prev.phi, m.phi) and np.array_equal(prev.psi, m.psi):
            meshes.append(meshes[-1])
        else:
            meshes.append(cell_mesh(m, *shape, material=True))
    return meshes


def _node_distances(
    metrics: list[WarpedMetric],
    meshes: list[CellMesh],
    x: QuotientPoint,
    resolution: QuotientResolution,
) -> list[np.ndarray]:
    dists: list[np.ndarray] = []
    for k, (m, cm) in enumerate(zip(metrics, meshes)):
        if k and cm is meshes[k - 1]:
            dists.append(dists[-1])
        else:
            dists.append(cell_distances(m, cm, x, resolution))
    return dists


def _to_cells(m: WarpedMetric, cm: CellMesh, f: np.ndarray) -> np.ndarray:
    """Axis values at the cell centres, constant along alpha."""
    column = np.interp(cm.s_centers, m.s, f)
    return np.repeat(column[:, None], cm.shape[1], axis=1)


def _factor(K: sparse.csr_matrix, V: np.ndarray, dt: float) -> SuperLU:
    return splu((sparse.diags(V) + dt * K).tocsc())


# ---------------------------------------------------------------------------
# Forward heat equation
# ---------------------------------------------------------------------------


def solve_heat(
    traj: Trajectory,
    domain: Optional[BallSpec],
    f0: np.ndarray,
    ell: float,
    t_start: float,
    t_end: float,
    c0: Optional[float] = None,
    cell_shape: tuple[int, int] = CELL_SHAPE,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> HeatField:
    """df/dt = Laplacian f + (ell / t) f with zero Dirichlet data outside `domain`.

    `domain` is None (whole manifold; open ends are insulated) or a ball.
    Balls centred at a pole and axis data are solved on the axis; other
    balls, and initial data given per cell, on the material cell mesh.
    The reaction is integrated exactly, f *= (t'/t)^ell.
    """
    f = np.array(f0, dtype=float)
    if np.any(f < 0.0):
        raise ParameterError("initial data must be non-negative")
    if ell < 0.0:
        raise ParameterError("ell must be non-negative")
    if ell > 0.0 and not t_start > 0.0:
        raise ParameterError("the ell / t reaction needs t_start > 0")
    if not t_end > t_start:
        raise ParameterError("need t_end > t_start")
    if not traj.covers(t_start, t_end):
        raise CoverageError(f"[{t_start}, {t_end}] not covered by the trajectory")
    nodes = traj.nodes(t_start, t_end)
    metrics = [traj.metric_at(float(t)) for t in nodes]
    pole = None if domain is None else pole_of(metrics[0], domain.center)
    if f.ndim == 2 or (domain is not None and pole is None):
        return _solve_heat_cells(metrics, nodes, domain, f, ell, c0, cell_shape, resolution)
    if f.shape != (metrics[0].grid.node_count,):
        raise ParameterError("initial data must match the grid")
    ops = [_operator(m) for m in metrics]

    f = np.where(_active(ops[0], domain, pole), f, 0.0)
    values = [f.copy()]
    steps = 0
    for k in range(nodes.size - 1):
        a, b = float(nodes[k]), float(nodes[k + 1])
        oa, ob = ops[k], ops[k + 1]
        limit = min(_step_limit(oa), _step_limit(ob))
        count = max(1, math.ceil((b - a) / limit))
        dt = (b - a) / count
        active = _active(oa, domain, pole) & _active(ob, domain, pole)
        t = a
        for i in range(count):
            theta = i / count
            V = (1.0 - theta) * oa.volumes + theta * ob.volumes
            w = (1.0 - theta) * oa.weights + theta * ob.weights
            f = f + dt * _divergence(f, w) / V
            f[~active] = 0.0
            t_new = a + (i + 1) * dt
            if ell > 0.0:
                f *= (t_new / t) ** ell
            t = t_new
            f = _check(f, t)
        steps += count
        values.append(f.copy())
    logger.debug("heat solve on [%.4g, %.4g]: %d explicit steps", t_start, t_end, steps)
    return HeatField(
        times=nodes,
        values=np.array(values),
        domain=domain,
        ell=ell,
        c0=c0,
        volumes=np.array([op.volumes for op in ops]),
        kind="heat",
    )


def _solve_heat_cells(
    metrics: list[WarpedMetric],
    nodes: np.ndarray,
    domain: Optional[BallSpec],
    f0: np.ndarray,
    ell: float,
    c0: Optional[float],
    shape: tuple[int, int],
    resolution: QuotientResolution,
) -> HeatField:
    meshes = _material_meshes(metrics, shape)
    if f0.shape == (metrics[0].grid.node_count,):
        f = _to_cells(metrics[0], meshes[0], f0)
    elif f0.shape == meshes[0].shape:
        f = f0.copy()
    else:
        raise ParameterError("initial data must match the grid or the cell mesh")
    if domain is None:
        masks = [np.ones(meshes[0].shape, dtype=bool)] * len(meshes)
    else:
        masks = [d < domain.radius for d in _node_distances(metrics, meshes, domain.center, resolution)]
        if not np.any(masks[0]):
            raise ParameterError(f"ball of radius {domain.radius} holds no cell centre")

    f = np.where(masks[0], f, 0.0)
    values = [f.copy()]
    steps = 0
    for k in range(nodes.size - 1):
        a, b = float(nodes[k]), float(nodes[k + 1])
        active = masks[k] & masks[k + 1]
        f = np.where(active, f, 0.0)
        count = max(1, math.ceil((b - a) / IMPLICIT_STEP))
        dt = (b - a) / count
        if np.any(active):
            shared = meshes[k] is meshes[k + 1]
            Ka, Va, _ = stiffness(Domain(meshes[k], active), insulated_ends=True)
            Kb, Vb, _ = (Ka, Va, None) if shared else stiffness(Domain(meshes[k + 1], active), insulated_ends=True)
            lu = _factor(Ka, Va, dt) if shared else None
            u = f[active]
            t = a
            for i in range(count):
                theta = (i + 1) / count
                V = (1.0 - theta) * Va + theta * Vb
                step_lu = lu if lu is not None else _factor((1.0 - theta) * Ka + theta * Kb, V, dt)
                u = step_lu.solve(V * u)
                t_new = a + (i + 1) * dt
                if ell > 0.0:
                    u *= (t_new / t) ** ell
                t = t_new
                u = _check(u, t)
            f[active] = u
        steps += count
        values.append(f.copy())
    logger.debug("cell heat solve on [%.4g, %.4g]: %d implicit steps", nodes[0], nodes[-1], steps)
    return HeatField(
        times=nodes,
        values=np.array(values),
        domain=domain,
        ell=ell,
        c0=c0,
        volumes=np.array([cm.volumes for cm in meshes]),
        kind="heat",
        cell_shape=shape,
    )


# ---------------------------------------------------------------------------
# Conjugate heat kernel
# ---------------------------------------------------------------------------


def _bump(y: np.ndarray) -> np.ndarray:
    u = np.zeros_like(y)
    inside = y < 1.0
    u[inside] = np.exp(1.0 - 1.0 / (1.0 - y[inside] ** 2))
    return u


def _mollified_delta(op: _Operator, pole: int, width_cells: float) -> np.ndarray:
    d = op.s if pole == 0 else op.length - op.s
    h = float(np.mean(np.diff(op.s)))
    u = _bump(d / (width_cells * h))
    return u / float(np.sum(op.volumes * u))


def _cell_delta(
    m: WarpedMetric, cm: CellMesh, x: QuotientPoint, width_cells: float, resolution: QuotientResolution
) -> np.ndarray:
    """Unit-mass bump over `width_cells` of the coarser cell side at x."""
    d = cell_distances(m, cm, x, resolution)
    psi_x = float(CubicSpline(m.s, m.psi)(x.s))
    h = max(float(np.mean(np.diff(cm.s_edges))), psi_x * float(cm.alpha_edges[1] - cm.alpha_edges[0]))
    u = _bump(d / (width_cells * h))
    return u / float(np.sum(cm.volumes * u))


def solve_conjugate_heat(
    traj: Trajectory,
    x: QuotientPoint,
    t: float,
    l_min: float,
    width_cells: float = 3.0,
    samples: Sequence[float] = (),
    cell_shape: tuple[int, int] = CELL_SHAPE,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> HeatField:
    """G(., l; x, t) for l in [l_min, t]: Laplacian u - R u + du/dl = 0.

    Integrated backward from a unit-mass bump at x, mollified over
    `width_cells` cells. In tau = t - l the update is
    u <- (u + dtau * div / V) * exp(-R dtau) on the axis when x is a pole,
    and the backward Euler analogue on the material cells otherwise. Times
    in `samples` become extra nodes so the kernel can be read there.
    """
    if not 0.0 <= l_min < t:
        raise ParameterError(f"need 0 <= l_min < t, got l_min = {l_min}, t = {t}")
    if not traj.covers(l_min, t):
        raise CoverageError(f"[{l_min}, {t}] not covered by the trajectory")
    inner = [float(v) for v in samples if l_min < v < t]
    nodes = np.union1d(traj.nodes(l_min, t), inner)[::-1]
    metrics = [traj.metric_at(float(l)) for l in nodes]
    pole = pole_of(metrics[0], x)
    if pole is None:
        return _conjugate_cells(metrics, nodes, x, t, width_cells, cell_shape, resolution)
    ops = [_operator(m) for m in metrics]
    scalars = [curvature(m).scalar for m in metrics]

    u = _mollified_delta(ops[0], pole, width_cells)
    values = [u.copy()]
    for k in range(nodes.size - 1):
        a, b = float(nodes[k]), float(nodes[k + 1])
        oa, ob = ops[k], ops[k + 1]
        span = a - b
        limit = min(_step_limit(oa), _step_limit(ob))
        count = max(1, math.ceil(span / limit))
        dtau = span / count
        for i in range(count):
            theta = i / count
            V = (1.0 - theta) * oa.volumes + theta * ob.volumes
            w = (1.0 - theta) * oa.weights + theta * ob.weights
            R = (1.0 - theta - 0.5 / count) * scalars[k] + (theta + 0.5 / count) * scalars[k + 1]
            before = float(np.sum(V * u))
            u = u + dtau * _divergence(u, w) / V
            after = float(np.sum(V * u))
            if abs(after - before) > MASS_DRIFT * max(abs(before), 1e-300):
                raise SolverError(f"diffusion step changed the mass by {after - before:.3g}")
            u = _check(u * np.exp(-R * dtau), a - (i + 1) * dtau)
        values.append(u.copy())
    return HeatField(
        times=nodes[::-1].copy(),
        values=np.array(values[::-1]),
        domain=None,
        ell=0.0,
        volumes=np.array([op.volumes for op in ops[::-1]]),
        kind="conjugate",
        source_time=t,
    )


def _conjugate_cells(
    metrics: list[WarpedMetric],
    nodes: np.ndarray,
    x: QuotientPoint,
    t: float,
    width_cells: float,
    shape: tuple[int, int],
    resolution: QuotientResolution,
) -> HeatField:
    meshes = _material_meshes(metrics, shape)
    scalars = [_to_cells(m, cm, curvature(m).scalar).ravel() for m, cm in zip(metrics, meshes)]

    u = _cell_delta(metrics[0], meshes[0], x, width_cells, resolution).ravel()
    values = [u.reshape(shape)]
    for k in range(nodes.size - 1):
        a, b = float(nodes[k]), float(nodes[k + 1])
        span = a - b
        count = max(1, math.ceil(span / IMPLICIT_STEP))
        dtau = span / count
        shared = meshes[k] is meshes[k + 1]
        Ka, Va, _ = stiffness(whole_domain(meshes[k]), insulated_ends=True)
        Kb, Vb, _ = (Ka, Va, None) if shared else stiffness(whole_domain(meshes[k + 1]), insulated_ends=True)
        lu = _factor(Ka, Va, dtau) if shared else None
        for i in range(count):
            theta = i / count
            V = (1.0 - theta) * Va + theta * Vb
            R = (1.0 - theta - 0.5 / count) * scalars[k] + (theta + 0.5 / count) * scalars[k + 1]
            before = float(np.sum(V * u))
            step_lu = lu if lu is not None else _factor((1.0 - theta) * Ka + theta * Kb, V, dtau)
            u = step_lu.solve(V * u)
            after = float(np.sum(V * u))
            if abs(after - before) > MASS_DRIFT * max(abs(before), 1e-300):
                raise SolverError(f"diffusion step changed the mass by {after - before:.3g}")
            u = _check(u * np.exp(-R * dtau), a - (i + 1) * dtau)
        values.append(u.reshape(shape))
    return HeatField(
        times=nodes[::-1].copy(),
        values=np.array(values[::-1]),
        domain=None,
        ell=0.0,
        volumes=np.array([cm.volumes for cm in meshes[::-1]]),
        kind="conjugate",
        source_time=t,
        cell_shape=shape,
    )


def kernel_bounds_audit(
    G: HeatField,
    k: NonInflateConstants,
    traj: Trajectory,
    x: QuotientPoint,
    t: float,
    l: float,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> tuple[EstimateReport, EstimateReport]:
    """Mass upper bound and pointwise Gaussian lower bound of a conjugate kernel.

    The lower report compares the largest admissible c1, the minimum over
    samples z with d(z, x) <= 2 sqrt(t - l) of

        G (t-l)^{n/2} / J(t) * exp(2 c2 d^2 / (t-l)) * exp((t-l)^{-1/2} int_l^t sqrt(t-s) R(z, s) ds),

    with the configured c1 (lower-bound direction). Samples are grid nodes
    for kernels sourced at a pole and material cells otherwise.
    """
    if G.kind != "conjugate" or G.source_time is None or abs(G.source_time - t) > 1e-12 * max(1.0, t):
        raise ParameterError("kernel audit needs a conjugate kernel sourced at t")
    i = G.index(l)
    tau = t - l
    if not tau > 0.0:
        raise ParameterError("need l < t")
    m_l = traj.metric_at(l)
    n = m_l.dim
    mass = float(np.sum(G.volumes[i] * G.values[i]))
    mass_report = EstimateReport.build(
        "kernel-mass",
        "int G dV <= 1 + C0 (1 + t - l)^{n/2}",
        "upper",
        mass,
        1.0 + k.C0 * (1.0 + tau) ** (n / 2.0),
        {"C0": k.C0, "l": l},
        time=t,
        center=x,
    )

    nodes = traj.nodes(l, t)
    metrics = [traj.metric_at(float(s)) for s in nodes]
    m_t = traj.metric_at(t)
    if G.cell_shape is not None:
        meshes = _material_meshes(metrics, G.cell_shape)
        R = np.array([_to_cells(m, cm, curvature(m).scalar) for m, cm in zip(metrics, meshes)])
        d = cell_distances(m_t, meshes[-1], x, resolution)
    else:
        pole = pole_of(m_t, x)
        if pole is None:
            raise ParameterError("axis kernels are centred at a pole")
        R = np.array([curvature(m).scalar for m in metrics])
        d = m_t.s if pole == 0 else m_t.length - m_t.s
    r_minus = float(np.max(np.maximum(-R, 0.0)))
    weight = np.sqrt(np.maximum(t - nodes, 0.0)).reshape(-1, *([1] * (R.ndim - 1)))
    r_term = trapezoid(weight * R, nodes, axis=0) / math.sqrt(tau)

    sample = d <= 2.0 * math.sqrt(tau)
    J = k.J(t, r_minus)
    admissible = (
        G.values[i] * tau ** (n / 2.0) / J * np.exp(2.0 * k.c2 * d**2 / tau) * np.exp(r_term)
    )
    c1_max = float(np.min(admissible[sample]))
    lower_report = EstimateReport.build(
        "kernel-lower",
        "G >= c1 J(t) (t-l)^{-n/2} e^{-2 c2 d^2/(t-l)} e^{-(t-l)^{-1/2} int sqrt(t-s) R}",
        "lower",
        c1_max,
        k.c1,
        {"c2": k.c2, "J": J, "samples": int(np.count_nonzero(sample)), "l": l},
        time=t,
        center=x,
    )
    return mass_report, lower_report


# ---------------------------------------------------------------------------
# Cut-off function
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class CutoffField:
    times: np.ndarray
    values: np.ndarray
    r1: float
    r2: float
    eps: float
    sigma_c: float
    T_hat: float
    alpha_u: float
    c1: float
    worst_slack: float
    worst_gradient: float
    cell_shape: Optional[tuple[int, int]] = None


def _profile(u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """eta(u) = 1 - smooth_step(u) with its first two derivatives in u."""
    u = np.asarray(u, dtype=float)
    eta = 1.0 - smooth_step(u)
    d1 = np.zeros_like(u)
    d2 = np.zeros_like(u)
    inside = (u > 0.0) & (u < 1.0)
    ui = u[inside]
    v = 1.0 - ui
    # f = a / (a + b) with a = e^{-1/u}, b = e^{-1/v}; g = ln(b / a) = 1/u - 1/v
    g = 1.0 / ui - 1.0 / v
    g1 = -1.0 / ui**2 - 1.0 / v**2
    g2 = 2.0 / ui**3 - 2.0 / v**3
    f = expit(-g)
    fp = -f * (1.0 - f) * g1
    fpp = f * (1.0 - f) * ((1.0 - 2.0 * f) * g1**2 - g2)
    d1[inside] = -fp
    d2[inside] = -fpp
    return eta, d1, d2


def _distance_laplacian(cm: CellMesh, d: np.ndarray) -> np.ndarray:
    """Laplacian of a distance field on the cells, -(K d) / V with insulated ends."""
    K, V, _ = stiffness(whole_domain(cm), insulated_ends=True)
    return -(K @ d.ravel() / V).reshape(cm.shape)


def cutoff_construct(
    traj: Trajectory,
    x: QuotientPoint,
    r1: float,
    r2: float,
    eps: float,
    alpha_u: float = 1.0,
    c1: float = 1.0,
    c0: Optional[float] = None,
    slack: float = 1e-3,
    cell_shape: tuple[int, int] = CELL_SHAPE,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> CutoffField:
    """phi(y, t) = exp(-sigma t) eta(d_t(x, y)) on [t0, t0 + T^), verified node by node.

    sigma = alpha_u / (eps (r2 - r1)^2), T^ = min(r1^2, alpha_u c1 (r2 - r1)^2) and
    t is measured from the trajectory start t0. Checked: 0 <= phi <= 1, the two
    support identities, |grad phi| <= alpha_u / (eps (r2 - r1)) and
    d phi/dt <= Laplacian phi up to `slack` times sigma exp(-sigma t).

    Pole centres are checked on the axis with Laplacian d = (n-1) psi'/psi.
    Other centres are checked on the material cells, where Laplacian d comes
    from the cell stiffness and d from fast marching.
    """
    if not 0.0 < r1 < r2:
        raise ParameterError(f"need 0 < r1 < r2, got {r1}, {r2}")
    if not 0.0 < eps < 1.0:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")
    if not (alpha_u > 0.0 and c1 > 0.0):
        raise ParameterError("alpha_u and c1 must be positive")
    width = r2 - r1
    sigma = alpha_u / (eps * width**2)
    T_hat = min(r1**2, alpha_u * c1 * width**2)
    t0 = traj.start
    t_end = min(t0 + T_hat, traj.end)
    nodes = traj.nodes(t0, t_end) if t_end > t0 else np.array([t0])
    metrics = [traj.metric_at(float(t)) for t in nodes]
    pole = pole_of(metrics[0], x)
    meshes: Optional[list[CellMesh]] = None
    if pole is None:
        meshes = _material_meshes(metrics, cell_shape)
        dist_list = _node_distances(metrics, meshes, x, resolution)
    else:
        dist_list = [m.s if pole == 0 else m.length - m.s for m in metrics]
    dists = np.array(dist_list)

    if c0 is not None:
        for k, m in enumerate(metrics):
            rm = curvature(m).rm_norm
            if meshes is not None:
                rm = _to_cells(m, meshes[k], rm)
            near = dists[k] <= r2
            if not np.any(near):
                continue
            worst = (m.time - t0) * float(np.max(rm[near]))
            if worst > c0:
                raise PreconditionError(f"t |Rm| = {worst:.4g} exceeds c0 = {c0} on B(x, r2) at t = {m.time:.6g}")

    n = metrics[0].dim
    grad_bound = alpha_u / (eps * width)
    dd_dt = np.gradient(dists, nodes, axis=0) if nodes.size > 1 else np.zeros_like(dists)
    values = []
    worst_slack = -math.inf
    worst_grad = 0.0
    lap_d = np.zeros(0)
    lap_for: Optional[np.ndarray] = None
    for k, m in enumerate(metrics):
        tau = m.time - t0
        decay = math.exp(-sigma * tau)
        d = dists[k]
        eta, e1, e2 = _profile((d - r1) / width)
        phi = decay * eta
        if np.any(phi < 0.0) or np.any(phi > 1.0):
            raise ConstructionFailedError("cut-off left [0, 1]", (float(d.flat[np.argmax(phi)]), m.time))
        values.append(phi)
        band = (d > r1) & (d < r2)
        if not np.any(band):
            continue
        if meshes is None:
            sign = 1.0 if pole == 0 else -1.0
            lap_d = np.zeros_like(d)
            lap_d[band] = (n - 1) * (m.axis.psi_s[band] / m.psi[band]) * sign
        elif lap_for is not dist_list[k]:
            lap_d, lap_for = _distance_laplacian(meshes[k], dist_list[k]), dist_list[k]
        phi_s = decay * e1[band] / width  # |grad d| = 1
        phi_ss = decay * e2[band] / width**2
        lap = phi_ss + lap_d[band] * phi_s
        dphi_dt = -sigma * phi[band] + decay * e1[band] / width * dd_dt[k][band]
        excess = (dphi_dt - lap) / (sigma * decay)
        grad = np.abs(phi_s)
        j = int(np.argmax(excess))
        worst_slack = max(worst_slack, float(excess[j]))
        worst_grad = max(worst_grad, float(np.max(grad)))
        if excess[j] > slack:
            raise ConstructionFailedError(
                f"d phi/dt exceeds the Laplacian by {excess[j]:.3g} (relative)",
                (float(d[band][j]), m.time),
            )
        if np.max(grad) > grad_bound * (1.0 + slack):
            i = int(np.argmax(grad))
            raise ConstructionFailedError(
                f"|grad phi| = {grad[i]:.4g} above {grad_bound:.4g}", (float(d[band][i]), m.time)
            )
    logger.debug("cut-off verified on %d slices, worst slack %.3g", nodes.size, worst_slack)
    return CutoffField(
        times=nodes,
        values=np.array(values),
        r1=r1,
        r2=r2,
        eps=eps,
        sigma_c=sigma,
        T_hat=T_hat,
        alpha_u=alpha_u,
        c1=c1,
        worst_slack=worst_slack,
        worst_gradient=worst_grad,
        cell_shape=None if meshes is None else cell_shape,
    )


# ---------------------------------------------------------------------------
# Moser iteration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MoserParams:
    n: int = 4
    p: float = 2.0
    A: float = 1.0
    B: float = 1.0
    ell: float = 1.0
    alpha_u: float = 1.0
    c1: float = 1.0
    gamma: Optional[float] = None
    r: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 3:
            raise ParameterError("Moser iteration needs n >= 3")
        if not self.p > 0.0:
            raise ParameterError("p must be positive")
        if not self.A > 0.0 or not self.B >= 1.0:
            raise ParameterError("need A > 0 and B >= 1")
        if not self.ell >= 1.0:
            raise ParameterError("ell must be at least 1")
        if not (self.alpha_u > 0.0 and self.c1 > 0.0 and self.r > 0.0):
            raise ParameterError("alpha_u, c1 and r must be positive")
        if self.p < 2.0:
            g = self.gamma
            if g is None or not 0.0 < g < 1.0:
                raise ParameterError("p < 2 needs gamma in (0, 1)")
            if not 2.0 * g ** ((self.n + 2) / self.p) > 1.0:
                raise ParameterError("p < 2 needs 2 gamma^{(n+2)/p} > 1")


@dataclass(frozen=True)
class MoserConstants:
    K: float
    T_hat: float
    case: Literal["p_ge_2", "p_lt_2"]


def moser_constants(mp: MoserParams) -> MoserConstants:
    """K1 (p >= 2) or K2 (p < 2) and T^ = min(r^2/4, alpha c1 r^2/4)."""
    n, p = mp.n, mp.p
    common = (
        (4.0 * mp.A) ** (n / (2.0 * p))
        * (1.0 + 2.0 / n) ** ((n + 2) ** 2 / (2.0 * p))
        * math.exp(2.0 * mp.c1 * mp.alpha_u**2 * (n + 2) / p)
    )
    T_hat = min(mp.r**2 / 4.0, mp.alpha_u * mp.c1 * mp.r**2 / 4.0)
    if p >= 2.0:
        return MoserConstants(K=common, T_hat=T_hat, case="p_ge_2")
    assert mp.gamma is not None
    g = mp.gamma
    gp = g ** ((n + 2) / p)
    K2 = gp * p * (2.0 - p) ** ((2.0 - p) / p) * common / ((2.0 * gp - 1.0) * (1.0 - g) ** ((n + 2) / p))
    return MoserConstants(K=K2, T_hat=T_hat, case="p_lt_2")


MOSER_REF = "sup_{B(x,r/2)} f(t) <= K (B + c n ell p/t + 32 a^2 n^2/r^2)^{(n+2)/(2p)} ||f||_{L^p(Q)}"


def _sup_curvature_scale(traj: Trajectory, x: QuotientPoint, r: float, t: float) -> float:
    """sup over checkpoints in (0, t] of t |Rm| on B(x, r)."""
    worst = 0.0
    for i in traj.window(0.0, t):
        m = traj.checkpoints[i]
        if m.time <= 0.0:
            continue
        near = np.abs(m.s - x.s) <= r
        if np.any(near):
            worst = max(worst, m.time * float(np.max(curvature(m).rm_norm[near])))
    return worst


def _cell_ball_integral(
    h: HeatField, traj: Trajectory, x: QuotientPoint, r: float, s: float, p: float, resolution: QuotientResolution
) -> float:
    cm = h.cells_at(traj, s)
    inside = cell_distances(traj.metric_at(s), cm, x, resolution) < r
    return float(np.sum(cm.volumes[inside] * h.at(s)[inside] ** p))


def moser_audit(
    h: HeatField,
    traj: Trajectory,
    x: QuotientPoint,
    r: float,
    p: float,
    t: float,
    mp: MoserParams,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> EstimateReport:
    """sup of f over the half ball at time t against the Moser space-time L^p bound.

    Axis fields take the sup over the slab |s - x.s| <= r/2, which is where
    the half ball meets the axis; cell fields over the cells with d < r/2.
    """
    if p != mp.p:
        mp = replace(mp, p=p)
    const = moser_constants(mp)
    n = mp.n
    params: dict = {"K": const.K, "T_hat": const.T_hat, "case": const.case, "p": p, "ell": mp.ell}
    kw = dict(time=t, center=x, radius=r)
    if not t < const.T_hat:
        return EstimateReport.skipped("moser", MOSER_REF, "upper", f"t = {t} not below T^ = {const.T_hat:.6g}", params, **kw)
    T = traj.singular_time_estimate
    if T is not None and not t < T:
        return EstimateReport.skipped("moser", MOSER_REF, "upper", "t not below the singular time", params, **kw)
    if not (h.times[0] <= t / 2.0 + 1e-12 and t <= h.times[-1] + 1e-12):
        raise CoverageError(f"field covers [{h.times[0]}, {h.times[-1]}], need [{t / 2}, {t}]")
    measured = _sup_curvature_scale(traj, x, r, t)
    params["c0_measured"] = measured
    if h.c0 is not None and measured > h.c0:
        return EstimateReport.skipped("moser", MOSER_REF, "upper", f"t |Rm| = {measured:.4g} exceeds c0", params, **kw)

    m_t = traj.metric_at(t)
    if h.on_cells:
        half = cell_distances(m_t, h.cells_at(traj, t), x, resolution) < r / 2.0
    else:
        half = np.abs(m_t.s - x.s) <= r / 2.0
    lhs = float(np.max(h.at(t)[half])) if np.any(half) else 0.0

    nodes = np.unique(np.concatenate([traj.nodes(t / 2.0, t), h.times[(h.times > t / 2.0) & (h.times < t)]]))
    if h.on_cells:
        integrand = np.array([_cell_ball_integral(h, traj, x, r, float(s), p, resolution) for s in nodes])
    else:
        integrand = np.array(
            [ball_integral(traj.metric_at(float(s)), BallSpec(x, r), h.at(float(s)) ** p, resolution) for s in nodes]
        )
    space_time = float(trapezoid(integrand, nodes))
    reaction = 2.0 * n * mp.ell * p / t if const.case == "p_ge_2" else 4.0 * n * mp.ell / t
    bracket = (mp.B + reaction + 32.0 * mp.alpha_u**2 * n**2 / r**2) ** ((n + 2) / (2.0 * p))
    scale = bracket * space_time ** (1.0 / p)
    rhs = const.K * scale
    params["K_star"] = lhs / scale if scale > 0.0 else 0.0
    params["space_time_integral"] = space_time
    return EstimateReport.build("moser", MOSER_REF, "upper", lhs, rhs, params, **kw)


def ricci_moser_field(
    traj: Trajectory,
    t_start: Optional[float] = None,
    t_end: Optional[float] = None,
    eps: float = 1e-8,
    c_n: float = 1.0,
) -> HeatField:
    """f = sqrt(|Ric|^2 + eps) sampled on the trajectory, with ell = max(1, c_n sup t |Rm|)."""
    if not eps > 0.0:
        raise ParameterError("eps must be positive")
    a = traj.start if t_start is None else t_start
    b = traj.end if t_end is None else t_end
    nodes = traj.nodes(a, b)
    metrics = [traj.metric_at(float(t)) for t in nodes]
    fields = [curvature(m) for m in metrics]
    values = np.array([np.sqrt(cf.ric_norm**2 + eps) for cf in fields])
    scale = max(m.time * float(np.max(cf.rm_norm)) for m, cf in zip(metrics, fields))
    return HeatField(
        times=nodes,
        values=values,
        domain=None,
        ell=max(1.0, c_n * scale),
        c0=None,
        volumes=np.array([_operator(m).volumes for m in metrics]),
        kind="ricci",
    )


__all__ = [
    "CELL_SHAPE",
    "CutoffField",
    "HeatField",
    "MoserConstants",
    "MoserParams",
    "cutoff_construct",
    "kernel_bounds_audit",
    "moser_audit",
    "moser_constants",
    "ricci_moser_field",
    "solve_conjugate_heat",
    "solve_heat",
]
