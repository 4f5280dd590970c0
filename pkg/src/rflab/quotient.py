"""Two-dimensional quotient meshes for rotationally symmetric manifolds.

Every point of a rotationally symmetric n-manifold is represented, up to an
isometry fixing a reference direction, by (s, alpha): arclength along the
axis and polar angle on the S^{n-1} fibre. The quotient carries the metric

    ds^2 + psi(s)^2 dalpha^2

and the volume weight omega_{n-2} psi^{n-1} sin^{n-2}(alpha) ds dalpha.

This module knows nothing about warped metrics; it works on sampled
(s, psi) data so that geometry can build on it:
- `build_mesh` samples psi on a uniform (s, alpha) lattice,
- `march` computes distances from a point on the alpha = 0 meridian by a
  second-order fast marching method,
- `ball_weights` turns a distance field into per-row angular weights,
- `count_components` flood-fills a mask with pole rows identified.

Fast marching error is first/second order in the mesh spacing; the documented
bound used throughout is C_MESH * (h_s + psi_max * h_alpha).
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.interpolate import CubicSpline, RegularGridInterpolator
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

C_MESH: float = 1.0

_POLE_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class QuotientMesh:
    """Uniform lattice on [s_lo, s_hi] x [0, alpha_max]."""

    s: np.ndarray
    alpha: np.ndarray
    psi: np.ndarray
    full_circle: bool

    @property
    def hs(self) -> float:
        return float(self.s[1] - self.s[0])

    @property
    def ha(self) -> float:
        return float(self.alpha[1] - self.alpha[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.s.size, self.alpha.size)

    def pole_rows(self) -> np.ndarray:
        scale = max(float(np.max(self.psi)), 1.0)
        return self.psi <= _POLE_EPS * scale

    def error_bound(self) -> float:
        return C_MESH * (self.hs + float(np.max(self.psi)) * self.ha)


def build_mesh(
    s_axis: np.ndarray,
    psi_axis: np.ndarray,
    s_lo: float,
    s_hi: float,
    alpha_max: float,
    s_nodes: int,
    alpha_nodes: int,
) -> QuotientMesh:
    alpha_max = min(alpha_max, math.pi)
    s = np.linspace(s_lo, s_hi, s_nodes)
    alpha = np.linspace(0.0, alpha_max, alpha_nodes)
    spline = CubicSpline(s_axis, psi_axis)
    psi = np.clip(spline(s), 0.0, None)
    # pole rows are exact zeros
    psi[np.isclose(s, s_axis[0]) & (psi_axis[0] == 0.0)] = 0.0
    psi[np.isclose(s, s_axis[-1]) & (psi_axis[-1] == 0.0)] = 0.0
    return QuotientMesh(
        s=s,
        alpha=alpha,
        psi=psi,
        full_circle=alpha_max >= math.pi - 1e-12,
    )


def _chord(ds: np.ndarray, psi_a: np.ndarray, psi_b: float, alpha: np.ndarray) -> np.ndarray:
    # exact for flat polar coordinates, O(d^3 K) otherwise
    return np.sqrt(ds**2 + psi_a * psi_b * 4.0 * np.sin(alpha / 2.0) ** 2)


def march(mesh: QuotientMesh, s0: float, psi0: float, stop: float = math.inf) -> np.ndarray:
    """Distances from (s0, alpha=0) to every lattice node.

    Nodes farther than `stop` are left at +inf.
    """
    ns, na = mesh.shape
    hs, ha = mesh.hs, mesh.ha
    psi = mesh.psi
    poles = mesh.pole_rows()

    T = np.full((ns, na), math.inf)
    known = np.zeros((ns, na), dtype=bool)
    fixed = np.zeros((ns, na), dtype=bool)
    heap: list[tuple[float, int, int]] = []

    k0 = int(round((s0 - mesh.s[0]) / hs))
    k0 = min(max(k0, 0), ns - 1)
    ks = np.arange(max(k0 - 2, 0), min(k0 + 3, ns))
    js = np.arange(0, min(3, na))
    block = _chord(
        mesh.s[ks][:, None] - s0,
        psi[ks][:, None],
        psi0,
        mesh.alpha[js][None, :],
    )
    for a, k in enumerate(ks):
        for b, j in enumerate(js):
            T[k, j] = block[a, b]
            fixed[k, j] = True
            heapq.heappush(heap, (T[k, j], int(k), int(j)))

    def neighbours(k: int, j: int) -> list[tuple[int, int]]:
        out = []
        if k > 0:
            out.append((k - 1, j))
        if k < ns - 1:
            out.append((k + 1, j))
        if j > 0:
            out.append((k, j - 1))
        if j < na - 1:
            out.append((k, j + 1))
        return out

    def alpha_index(j: int) -> int | None:
        if j < 0:
            return -j
        if j >= na:
            return 2 * (na - 1) - j if mesh.full_circle else None
        return j

    def upwind_s(k: int, j: int) -> tuple[float, float] | None:
        best: tuple[float, float] | None = None
        for dk in (-1, 1):
            k1 = k + dk
            if not (0 <= k1 < ns and known[k1, j]):
                continue
            t1 = T[k1, j]
            k2 = k + 2 * dk
            if 0 <= k2 < ns and known[k2, j] and T[k2, j] <= t1:
                cand = (1.5 / hs, (4.0 * t1 - T[k2, j]) / 3.0, t1)
            else:
                cand = (1.0 / hs, t1, t1)
            if best is None or cand[2] < best[2]:
                best = cand
        return None if best is None else (best[0], best[1])

    def upwind_alpha(k: int, j: int) -> tuple[float, float] | None:
        if poles[k]:
            return None
        h = psi[k] * ha
        best: tuple[float, float, float] | None = None
        for dj in (-1, 1):
            j1 = alpha_index(j + dj)
            if j1 is None or not known[k, j1]:
                continue
            t1 = T[k, j1]
            j2 = alpha_index(j + 2 * dj)
            if j2 is not None and known[k, j2] and T[k, j2] <= t1:
                cand = (1.5 / h, (4.0 * t1 - T[k, j2]) / 3.0, t1)
            else:
                cand = (1.0 / h, t1, t1)
            if best is None or cand[2] < best[2]:
                best = cand
        return None if best is None else (best[0], best[1])

    def solve(k: int, j: int) -> float:
        terms = [t for t in (upwind_s(k, j), upwind_alpha(k, j)) if t is not None]
        if not terms:
            return math.inf
        terms.sort(key=lambda t: t[1])
        a0, b0 = terms[0]
        single = b0 + 1.0 / a0
        if len(terms) == 1:
            return single
        qa = sum(a * a for a, _ in terms)
        qb = -2.0 * sum(a * a * b for a, b in terms)
        qc = sum(a * a * b * b for a, b in terms) - 1.0
        disc = qb * qb - 4.0 * qa * qc
        if disc < 0.0:
            return single
        value = (-qb + math.sqrt(disc)) / (2.0 * qa)
        if value < terms[-1][1]:
            return single
        return min(value, single)

    while heap:
        value, k, j = heapq.heappop(heap)
        if known[k, j] or value > T[k, j]:
            continue
        if value > stop:
            break
        accepted = [(k, j)]
        if poles[k]:
            T[k, :] = value
            known[k, :] = True
            accepted = [(k, jj) for jj in range(na)]
        else:
            known[k, j] = True
        for kk, jj in accepted:
            for k1, j1 in neighbours(kk, jj):
                if known[k1, j1] or fixed[k1, j1]:
                    continue
                cand = solve(k1, j1)
                if cand < T[k1, j1]:
                    T[k1, j1] = cand
                    heapq.heappush(heap, (cand, k1, j1))

    T[~known] = math.inf
    return T


def pole_distances(mesh: QuotientMesh, s_pole: float) -> np.ndarray:
    """Exact distance field from a pole: |s - s_pole| on every fibre angle."""
    d = np.abs(mesh.s - s_pole)
    return np.repeat(d[:, None], mesh.alpha.size, axis=1)


def sin_power_integral(a: np.ndarray, m: int) -> np.ndarray:
    """Integral of sin^m over [0, a], elementwise."""
    a = np.asarray(a, dtype=float)
    if m == 0:
        return a.copy()
    if m == 1:
        return 1.0 - np.cos(a)
    return -np.sin(a) ** (m - 1) * np.cos(a) / m + (m - 1) / m * sin_power_integral(a, m - 2)


@dataclass(frozen=True, eq=False)
class BallRows:
    """Per-row angular extent of a ball on the quotient mesh."""

    alpha_star: np.ndarray
    weights: np.ndarray
    truncated: bool
    saturated: bool


def ball_weights(mesh: QuotientMesh, dist: np.ndarray, r: float, dim: int) -> BallRows:
    """Angular weights W(s) = integral of sin^{n-2} over {alpha : d < r} per row.

    `truncated` is set when a row is inside the ball at the last lattice angle
    although the lattice stops short of alpha = pi.
    """
    ns, na = mesh.shape
    alpha = mesh.alpha
    a_star = np.zeros(ns)
    truncated = False
    saturated = True
    for k in range(ns):
        row = dist[k]
        if row[0] >= r:
            saturated = False
            continue
        outside = np.nonzero(row >= r)[0]
        if outside.size == 0:
            a_star[k] = alpha[-1]
            if not mesh.full_circle:
                truncated = True
            continue
        saturated = False
        j = int(outside[0])
        t0, t1 = row[j - 1], row[j]
        frac = 1.0 if not math.isfinite(t1) else (r - t0) / (t1 - t0)
        a_star[k] = alpha[j - 1] + frac * (alpha[j] - alpha[j - 1])
    weights = sin_power_integral(a_star, dim - 2)
    return BallRows(alpha_star=a_star, weights=weights, truncated=truncated, saturated=saturated)


def sample(mesh: QuotientMesh, field: np.ndarray, s: float, alpha: float) -> float:
    interp = RegularGridInterpolator((mesh.s, mesh.alpha), field, method="linear")
    return float(interp([[s, alpha]])[0])


def count_components(mesh: QuotientMesh, mask: np.ndarray) -> int:
    """Connected components of a lattice mask.

    Lattice neighbours are 4-connected; all nodes of a pole row are one point.
    """
    ns, na = mask.shape
    index = np.arange(ns * na).reshape(ns, na)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []

    both = mask[1:, :] & mask[:-1, :]
    rows.append(index[1:, :][both])
    cols.append(index[:-1, :][both])
    both = mask[:, 1:] & mask[:, :-1]
    rows.append(index[:, 1:][both])
    cols.append(index[:, :-1][both])
    for k in np.nonzero(mesh.pole_rows())[0]:
        members = index[k][mask[k]]
        if members.size > 1:
            rows.append(members[1:])
            cols.append(np.full(members.size - 1, members[0]))

    r = np.concatenate(rows)
    c = np.concatenate(cols)
    graph = sparse.coo_matrix((np.ones(r.size), (r, c)), shape=(ns * na, ns * na))
    _, labels = connected_components(graph, directed=False)
    picked = labels[mask.ravel()]
    return int(np.unique(picked).size)
