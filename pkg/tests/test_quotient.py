import math

import numpy as np
import pytest

from rflab import quotient


def _flat_mesh(s_nodes: int = 41, alpha_nodes: int = 65) -> quotient.QuotientMesh:
    s_axis = np.linspace(0.0, 2.0, 50)
    return quotient.build_mesh(s_axis, s_axis.copy(), 0.0, 2.0, math.pi, s_nodes, alpha_nodes)


def test_sin_power_integral_closed_forms() -> None:
    """Integrals of sin^m over [0, pi] for m = 0, 1, 2, 3."""
    a = np.array([math.pi])
    assert quotient.sin_power_integral(a, 0)[0] == pytest.approx(math.pi)
    assert quotient.sin_power_integral(a, 1)[0] == pytest.approx(2.0)
    assert quotient.sin_power_integral(a, 2)[0] == pytest.approx(math.pi / 2.0)
    assert quotient.sin_power_integral(a, 3)[0] == pytest.approx(4.0 / 3.0)


def test_build_mesh_marks_pole_rows() -> None:
    """A psi = 0 end becomes a pole row and the full angle range is kept."""
    mesh = _flat_mesh()
    assert mesh.full_circle
    assert mesh.shape == (41, 65)
    poles = mesh.pole_rows()
    assert poles[0]
    assert not poles[1:].any()


def test_pole_distances_ignore_the_fibre_angle() -> None:
    """From a pole every angle on a row is equally far."""
    mesh = _flat_mesh()
    dist = quotient.pole_distances(mesh, 0.0)
    assert np.allclose(dist[:, 0], mesh.s)
    assert np.allclose(dist, dist[:, :1])


def test_march_reproduces_flat_distances() -> None:
    """Distances from (1, 0) on the flat quotient match the planar formula."""
    mesh = _flat_mesh(81, 129)
    dist = quotient.march(mesh, 1.0, 1.0)
    s, a = np.meshgrid(mesh.s, mesh.alpha, indexing="ij")
    exact = np.sqrt(s**2 + 1.0 - 2.0 * s * np.cos(a))
    near = exact < 1.0
    assert np.max(np.abs(dist[near] - exact[near])) < mesh.error_bound()


def test_march_stops_at_the_cutoff() -> None:
    """Nodes beyond `stop` are left at infinity."""
    mesh = _flat_mesh()
    dist = quotient.march(mesh, 1.0, 1.0, stop=0.3)
    assert np.isinf(dist[-1, -1])
    assert np.isfinite(dist[20, 0])


def test_ball_weights_about_a_pole() -> None:
    """Rows inside a pole ball get the full weight, rows outside none."""
    mesh = _flat_mesh()
    dist = quotient.pole_distances(mesh, 0.0)
    rows = quotient.ball_weights(mesh, dist, 1.0, 4)
    inside = mesh.s < 0.95
    outside = mesh.s > 1.05
    assert np.allclose(rows.weights[inside], math.pi / 2.0)
    assert np.allclose(rows.weights[outside], 0.0)
    assert not rows.truncated
    assert not rows.saturated


def test_count_components_joins_pole_rows() -> None:
    """Two strips meeting only through the pole row form one component."""
    mesh = _flat_mesh(11, 9)
    mask = np.zeros(mesh.shape, dtype=bool)
    mask[:4, 0] = True
    mask[:4, -1] = True
    assert quotient.count_components(mesh, mask) == 1

    mask[0, :] = False
    assert quotient.count_components(mesh, mask) == 2


def test_sample_interpolates_linearly() -> None:
    """A field linear in s is sampled exactly between nodes."""
    mesh = _flat_mesh()
    field = np.repeat(mesh.s[:, None], mesh.alpha.size, axis=1)
    assert quotient.sample(mesh, field, 0.73, 1.1) == pytest.approx(0.73)
