"""Dirichlet eigenvalues, the Faber-Krahn sampler and the Sobolev audit.

Two discretizations of the Dirichlet Laplacian are used:

- pole-centred balls reduce to the radial problem
  -(psi^{n-1} u_s)_s = lambda psi^{n-1} u on [0, r], u_s(0) = 0, u(r) = 0,
  discretized by finite volumes and solved by inverse iteration;
- arbitrary domains live on a cell-centred (s, alpha) mesh of the quotient,
  where the first eigenpair is found by LOBPCG preconditioned with a sparse
  LU factorization of the stiffness matrix. Off-pole eigenfunctions are
  never assumed radial.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline, RegularGridInterpolator
from scipy.sparse.linalg import LinearOperator, lobpcg, splu

from . import quotient
from .errors import ConvergenceError, ParameterError
from .geometry import (
    DEFAULT_RESOLUTION,
    BallSpec,
    QuotientPoint,
    QuotientResolution,
    WarpedMetric,
    ball_volume,
    curvature,
    distance_field,
    pole_of,
    sphere_area,
    volume_integral,
)
from .reports import EstimateReport

logger = logging.getLogger(__name__)

EIGEN_TOLERANCE = 1e-8
EIGEN_MAX_ITER = 10_000


@dataclass(frozen=True)
class SobolevConstants:
    A: float
    B: float

    def __post_init__(self) -> None:
        if not self.A > 0.0:
            raise ParameterError(f"Sobolev constant A must be positive, got {self.A}")
        if not self.B >= 1.0:
            raise ParameterError(f"Sobolev constant B must be at least 1, got {self.B}")


@dataclass(frozen=True, eq=False)
class EigenResult:
    lambda1: float
    eigenfunction: np.ndarray
    residual: float
    iterations: int
    volume: float = math.nan


# ---------------------------------------------------------------------------
# Pole-centred balls
# ---------------------------------------------------------------------------


def _axis_weight(m: WarpedMetric, power: int) -> CubicSpline:
    """Antiderivative in s of psi^power."""
    return CubicSpline(m.s, m.psi**power).antiderivative()


def lambda1_pole_ball(
    m: WarpedMetric,
    r: float,
    pole: int = 0,
    cells: int = 400,
    tol: float = EIGEN_TOLERANCE,
    max_iter: int = EIGEN_MAX_ITER,
) -> EigenResult:
    """First Dirichlet eigenvalue of the geodesic ball of radius r about a pole."""
    if not r > 0.0:
        raise ParameterError(f"ball radius must be positive, got {r}")
    if pole not in (0, 1) or not m.poles[pole]:
        raise ParameterError(f"end {pole} of the metric is not a pole")
    length = m.length
    if r > length * (1.0 + 1e-12) or (m.closed and r >= length):
        raise ParameterError(f"ball of radius {r} does not fit in an axis of length {length}")
    n = m.dim
    h = r / cells
    d = np.linspace(0.0, r, cells + 1)

    def axis(dist: np.ndarray) -> np.ndarray:
        return dist if pole == 0 else length - dist

    psi = CubicSpline(m.s, m.psi)
    mid = 0.5 * (d[:-1] + d[1:])
    faces = np.clip(psi(axis(mid)), 0.0, None) ** (n - 1) / h

    prim = _axis_weight(m, n - 1)
    lo = axis(np.concatenate([[0.0], mid]))
    hi = axis(np.concatenate([mid, [r]]))
    volumes = np.abs(prim(hi) - prim(lo))[:-1]

    # unknowns at d[0..cells-1]; u(r) = 0
    diag = faces.copy()
    diag[1:] += faces[:-1]
    K = sparse.diags([diag, -faces[:-1], -faces[:-1]], [0, 1, -1], format="csc")
    lu = splu(K)

    u = np.cos(0.5 * math.pi * d[:-1] / r)
    lam = math.inf
    for it in range(1, max_iter + 1):
        v = lu.solve(volumes * u)
        norm = math.sqrt(float(v @ (volumes * v)))
        v /= norm
        lam_new = float(v @ (K @ v))
        u = v
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    else:
        raise ConvergenceError(
            f"inverse iteration did not converge in {max_iter} iterations",
            last_iterate=EigenResult(lam, u, math.nan, max_iter),
        )
    residual = float(np.linalg.norm(K @ u - lam * volumes * u) / np.linalg.norm(lam * volumes * u))
    logger.debug("pole ball r=%.4g: lambda1=%.8g after %d iterations", r, lam, it)
    return EigenResult(
        lambda1=lam,
        eigenfunction=np.append(u, 0.0),
        residual=residual,
        iterations=it,
        volume=sphere_area(n - 1) * float(abs(prim(axis(r)) - prim(axis(0.0)))),
    )


# ---------------------------------------------------------------------------
# Cell-centred quotient domains
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CellMesh:
    """Cell-centred lattice on [0, L] x [0, pi] with per-cell volumes."""

    s_edges: np.ndarray
    alpha_edges: np.ndarray
    psi_center: np.ndarray
    psi_edge: np.ndarray
    volumes: np.ndarray
    dim: int
    open_ends: tuple[bool, bool]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.s_edges.size - 1, self.alpha_edges.size - 1)

    @property
    def s_centers(self) -> np.ndarray:
        return 0.5 * (self.s_edges[:-1] + self.s_edges[1:])

    @property
    def alpha_centers(self) -> np.ndarray:
        return 0.5 * (self.alpha_edges[:-1] + self.alpha_edges[1:])


def cell_mesh(m: WarpedMetric, s_cells: int = 96, alpha_cells: int = 48, material: bool = False) -> CellMesh:
    """Cell-centred quotient mesh of `m`.

    Edges are uniform in s, or uniform in the grid coordinate x when
    `material` is set; material meshes of one trajectory share their cells
    at every time.
    """
    if s_cells < 4 or alpha_cells < 2:
        raise ParameterError("cell mesh needs at least 4 x 2 cells")
    n = m.dim
    if material:
        s_edges = CubicSpline(m.grid.x, m.s)(np.linspace(0.0, 1.0, s_cells + 1))
        s_edges[0], s_edges[-1] = 0.0, m.length
    else:
        s_edges = np.linspace(0.0, m.length, s_cells + 1)
    alpha_edges = np.linspace(0.0, math.pi, alpha_cells + 1)
    psi = CubicSpline(m.s, m.psi)
    centers = 0.5 * (s_edges[:-1] + s_edges[1:])
    prim = _axis_weight(m, n - 1)
    radial = np.diff(prim(s_edges))
    angular = np.diff(quotient.sin_power_integral(alpha_edges, n - 2))
    volumes = sphere_area(n - 2) * np.outer(radial, angular)
    return CellMesh(
        s_edges=s_edges,
        alpha_edges=alpha_edges,
        psi_center=np.clip(psi(centers), 0.0, None),
        psi_edge=np.clip(psi(s_edges), 0.0, None),
        volumes=volumes,
        dim=n,
        open_ends=(not m.poles[0], not m.poles[1]),
    )


@dataclass(frozen=True, eq=False)
class Domain:
    cells: CellMesh
    mask: np.ndarray

    def __post_init__(self) -> None:
        if self.mask.shape != self.cells.shape:
            raise ParameterError("domain mask does not match its cell mesh")

    def __or__(self, other: "Domain") -> "Domain":
        if other.cells is not self.cells:
            raise ParameterError("domains live on different cell meshes")
        return Domain(self.cells, self.mask | other.mask)

    def without_cell(self, i: int, j: int) -> "Domain":
        mask = self.mask.copy()
        mask[i, j] = False
        return Domain(self.cells, mask)

    @property
    def volume(self) -> float:
        return float(np.sum(self.cells.volumes[self.mask]))

    @property
    def has_boundary(self) -> bool:
        """Some face of the domain is a Dirichlet face (a mask edge or an open end of the axis)."""
        mask = self.mask
        if np.any(mask[:-1, :] != mask[1:, :]) or np.any(mask[:, :-1] != mask[:, 1:]):
            return True
        ends = self.cells.open_ends
        return bool((ends[0] and mask[0, :].any()) or (ends[1] and mask[-1, :].any()))


def whole_domain(cells: CellMesh) -> Domain:
    return Domain(cells, np.ones(cells.shape, dtype=bool))


def cell_distances(
    m: WarpedMetric,
    cells: CellMesh,
    center: QuotientPoint,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> np.ndarray:
    """d(center, .) at every cell centre, exact for poles and fast-marched otherwise."""
    sc, ac = cells.s_centers, cells.alpha_centers
    pole = pole_of(m, center)
    if pole is not None:
        d = sc if pole == 0 else m.length - sc
        return np.repeat(d[:, None], ac.size, axis=1)
    mesh, dist = distance_field(m, center, resolution)
    interp = RegularGridInterpolator((mesh.s, mesh.alpha), dist, bounds_error=False, fill_value=None)
    S, A = np.meshgrid(sc, ac, indexing="ij")
    return interp(np.column_stack([S.ravel(), A.ravel()])).reshape(S.shape)


def ball_domain(
    m: WarpedMetric,
    cells: CellMesh,
    b: BallSpec,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> Domain:
    """Cells whose centre lies in the open ball."""
    return Domain(cells, cell_distances(m, cells, b.center, resolution) < b.radius)


def stiffness(domain: Domain, insulated_ends: bool = False) -> tuple[sparse.csr_matrix, np.ndarray, np.ndarray]:
    """Finite volume stiffness K, cell volumes and cell index of a domain.

    K f approximates -Laplacian f times the cell volume. Faces to cells
    outside the mask are Dirichlet faces half a cell away; the open ends of
    the axis are Dirichlet too unless `insulated_ends` is set.
    """
    cm = domain.cells
    n = cm.dim
    ns, na = cm.shape
    edges, centers = cm.s_edges, cm.s_centers
    ha = float(cm.alpha_edges[1] - cm.alpha_edges[0])
    omega = sphere_area(n - 2)
    angular = np.diff(quotient.sin_power_integral(cm.alpha_edges, n - 2))

    # sphere areas at every s edge, per alpha band
    area = omega * cm.psi_edge[:, None] ** (n - 1) * angular[None, :]
    inner = area[1:-1, :]
    s_face = inner / np.diff(centers)[:, None]
    below = inner / (edges[1:-1] - centers[:-1])[:, None]
    above = inner / (centers[1:] - edges[1:-1])[:, None]
    a_face = (
        omega
        * (cm.psi_center[:, None] ** (n - 3))
        * np.diff(edges)[:, None]
        * np.sin(cm.alpha_edges[None, 1:-1]) ** (n - 2)
        / ha
    )

    mask = domain.mask
    index = -np.ones((ns, na), dtype=int)
    index[mask] = np.arange(int(np.count_nonzero(mask)))
    size = int(np.count_nonzero(mask))
    diag = np.zeros(size)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []

    # s-direction faces between rows k and k+1
    left, right = mask[:-1, :], mask[1:, :]
    both = left & right
    ia = index[:-1, :][both]
    ib = index[1:, :][both]
    c = s_face[both]
    rows += [ia, ib]
    cols += [ib, ia]
    vals += [-c, -c]
    np.add.at(diag, ia, c)
    np.add.at(diag, ib, c)
    lone = left & ~right
    np.add.at(diag, index[:-1, :][lone], below[lone])
    lone = right & ~left
    np.add.at(diag, index[1:, :][lone], above[lone])
    if not insulated_ends:
        if cm.open_ends[0]:
            sel = mask[0, :]
            np.add.at(diag, index[0, :][sel], area[0, :][sel] / (centers[0] - edges[0]))
        if cm.open_ends[1]:
            sel = mask[-1, :]
            np.add.at(diag, index[-1, :][sel], area[-1, :][sel] / (edges[-1] - centers[-1]))

    left, right = mask[:, :-1], mask[:, 1:]
    both = left & right
    ia = index[:, :-1][both]
    ib = index[:, 1:][both]
    c = a_face[both]
    rows += [ia, ib]
    cols += [ib, ia]
    vals += [-c, -c]
    np.add.at(diag, ia, c)
    np.add.at(diag, ib, c)
    lone = left & ~right
    np.add.at(diag, index[:, :-1][lone], 2.0 * a_face[lone])
    lone = right & ~left
    np.add.at(diag, index[:, 1:][lone], 2.0 * a_face[lone])

    off = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )
    K = (off + sparse.diags(diag)).tocsr()
    return K, cm.volumes[mask], index


def lambda1_domain(
    m: WarpedMetric,
    domain: Domain,
    tol: float = EIGEN_TOLERANCE,
    max_iter: int = EIGEN_MAX_ITER,
) -> EigenResult:
    """First Dirichlet eigenvalue of a quotient-mesh domain by preconditioned LOBPCG."""
    if not np.any(domain.mask):
        raise ParameterError("empty domain")
    if not domain.has_boundary:
        raise ParameterError("domain has no Dirichlet boundary; its lowest eigenvalue is the constant mode")
    K, volumes, index = stiffness(domain)
    size = volumes.size
    M = sparse.diags(volumes).tocsr()
    lu = splu(K.tocsc())
    precond = LinearOperator(K.shape, matvec=lu.solve, dtype=float)

    x0 = np.ones((size, 1))
    x0 /= math.sqrt(float(volumes.sum()))
    estimate = float(x0[:, 0] @ (K @ x0[:, 0]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w, v = lobpcg(
            K,
            x0,
            B=M,
            M=precond,
            tol=math.sqrt(tol) * max(estimate, 1e-12) * 0.1,
            maxiter=max_iter,
            largest=False,
        )
    lam = float(w[0])
    u = v[:, 0]
    u = u * (1.0 if u.sum() >= 0.0 else -1.0)
    u /= math.sqrt(float(u @ (volumes * u)))
    residual = float(np.linalg.norm(K @ u - lam * volumes * u) / np.linalg.norm(K @ u))
    field = np.zeros(domain.mask.shape)
    field[domain.mask] = u
    result = EigenResult(lam, field, residual, max_iter, volume=domain.volume)
    if not (math.isfinite(lam) and residual <= math.sqrt(tol)):
        raise ConvergenceError(
            f"LOBPCG residual {residual:.3g} above {math.sqrt(tol):.1g}", last_iterate=result
        )
    logger.debug("domain of %d cells: lambda1=%.8g (residual %.2e)", size, lam, residual)
    return result


# ---------------------------------------------------------------------------
# Faber-Krahn
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BallFamily:
    """Concentric balls at fractions of a region's radius."""

    fractions: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)

    def balls(self, region: BallSpec) -> list[BallSpec]:
        return [BallSpec(region.center, f * region.radius) for f in self.fractions if f > 0.0]


@dataclass
class FaberKrahnResult:
    value: float
    best: BallSpec
    values: list[float] = field(default_factory=list)
    lambdas: list[float] = field(default_factory=list)
    volumes: list[float] = field(default_factory=list)


def faber_krahn(
    m: WarpedMetric,
    region: BallSpec,
    sampler: BallFamily | Sequence[BallSpec] = BallFamily(),
    s_cells: int = 96,
    alpha_cells: int = 48,
    resolution: QuotientResolution = DEFAULT_RESOLUTION,
) -> FaberKrahnResult:
    """min over the sampled domains U of Vol(U)^{2/n} lambda1(U), an upper bound for the constant."""
    balls = sampler.balls(region) if isinstance(sampler, BallFamily) else list(sampler)
    if not balls:
        raise ParameterError("empty domain family")
    n = m.dim
    cells: Optional[CellMesh] = None
    values, lambdas, volumes = [], [], []
    for b in balls:
        pole = pole_of(m, b.center)
        if pole is not None:
            eig = lambda1_pole_ball(m, b.radius, pole=pole)
            vol = ball_volume(m, b).value
        else:
            if cells is None:
                cells = cell_mesh(m, s_cells, alpha_cells)
            dom = ball_domain(m, cells, b, resolution)
            eig = lambda1_domain(m, dom)
            vol = dom.volume
        lambdas.append(eig.lambda1)
        volumes.append(vol)
        values.append(vol ** (2.0 / n) * eig.lambda1)
    best = int(np.argmin(values))
    return FaberKrahnResult(
        value=float(values[best]),
        best=balls[best],
        values=[float(v) for v in values],
        lambdas=lambdas,
        volumes=volumes,
    )


# ---------------------------------------------------------------------------
# Sobolev audit
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BumpFamily:
    """Axis bumps u(s) = amplitude * b((s - c) / w), c and w as fractions of the axis length."""

    centers: tuple[float, ...] = (0.0, 0.25, 0.5)
    widths: tuple[float, ...] = (0.1, 0.2, 0.4)
    amplitude: float = 1.0


def _bump(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    inside = np.abs(y) < 1.0
    b = np.zeros_like(y)
    db = np.zeros_like(y)
    yi = y[inside]
    b[inside] = np.exp(1.0 - 1.0 / (1.0 - yi**2))
    db[inside] = b[inside] * (-2.0 * yi / (1.0 - yi**2) ** 2)
    return b, db


SobolevForm = Literal["global", "local"]


def sobolev_audit(
    m: WarpedMetric,
    c: SobolevConstants,
    family: BumpFamily = BumpFamily(),
    form: SobolevForm = "global",
) -> EstimateReport:
    """Check the Sobolev inequality on a family of L^2-normalized axis bumps.

    global: (int |u|^{2n/(n-2)})^{(n-2)/n} <= A int(|grad u|^2 + R u^2 / 4) + B int u^2
    local:  (int |u|^{2n/(n-2)})^{(n-2)/n} <= A int(4 |grad u|^2 + (R + B) u^2)
    """
    if form not in ("global", "local"):
        raise ParameterError(f"unknown Sobolev form {form!r}")
    n = m.dim
    if n < 3:
        raise ParameterError("the Sobolev audit needs dimension at least 3")
    length = m.length
    s = m.s
    R = curvature(m).scalar
    q = 2.0 * n / (n - 2.0)
    worst: Optional[tuple[float, float, float, float, float]] = None
    violators: list[tuple[float, float]] = []
    skipped = 0
    count = 0
    for cf in family.centers:
        for wf in family.widths:
            sc, w = cf * length, wf * length
            if w <= 0.0:
                continue
            if (not m.poles[0] and sc - w < 0.0) or (not m.poles[1] and sc + w > length):
                skipped += 1
                continue
            b, db = _bump((s - sc) / w)
            u = family.amplitude * b
            du = family.amplitude * db / w
            l2 = volume_integral(m, u**2)
            if l2 > 0.0:
                u, du = u / math.sqrt(l2), du / math.sqrt(l2)
            lhs = volume_integral(m, np.abs(u) ** q) ** ((n - 2.0) / n)
            grad = volume_integral(m, du**2)
            mass = volume_integral(m, u**2)
            curv = volume_integral(m, R * u**2)
            if form == "global":
                rhs = c.A * (grad + curv / 4.0) + c.B * mass
            else:
                rhs = c.A * (4.0 * grad + curv + c.B * mass)
            count += 1
            margin = rhs - lhs
            if margin < 0.0:
                violators.append((sc, w))
            if worst is None or margin < worst[0]:
                worst = (margin, lhs, rhs, sc, w)
    name = "sobolev" if form == "global" else "sobolev-local"
    reference = (
        "||u||_{2n/(n-2)}^2 <= A int(|du|^2 + R u^2/4) + B int u^2"
        if form == "global"
        else "||h||_{2n/(n-2)}^2 <= A int(4|dh|^2 + (R+B) h^2)"
    )
    params = {"A": c.A, "B": c.B, "form": form, "functions": count, "skipped_functions": skipped}
    if worst is None:
        return EstimateReport.skipped(name, reference, "upper", "no admissible test function", params)
    params.update({"violators": violators, "worst_center": worst[3], "worst_width": worst[4]})
    return EstimateReport.build(name, reference, "upper", worst[1], worst[2], params, time=m.time)


__all__ = [
    "BallFamily",
    "BumpFamily",
    "CellMesh",
    "Domain",
    "EigenResult",
    "FaberKrahnResult",
    "SobolevConstants",
    "ball_domain",
    "cell_distances",
    "cell_mesh",
    "faber_krahn",
    "lambda1_domain",
    "lambda1_pole_ball",
    "sobolev_audit",
    "stiffness",
    "whole_domain",
]
