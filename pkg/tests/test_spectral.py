import math

import pytest

from rflab.errors import ParameterError
from rflab.geometry import BallSpec, QuotientPoint, WarpedMetric
from rflab.spectral import (
    BallFamily,
    BumpFamily,
    SobolevConstants,
    ball_domain,
    cell_mesh,
    faber_krahn,
    lambda1_domain,
    lambda1_pole_ball,
    sobolev_audit,
    whole_domain,
)

# first zero of the Bessel function J_1: lambda1 of the unit ball in R^4 is its square
J11 = 3.8317059702075125
POLE = QuotientPoint(0.0)


def test_sobolev_constants_validation() -> None:
    """A must be positive and B at least 1."""
    with pytest.raises(ParameterError):
        SobolevConstants(A=0.0, B=1.0)
    with pytest.raises(ParameterError):
        SobolevConstants(A=1.0, B=0.5)


def test_flat_unit_ball_eigenvalue(flat_cap: WarpedMetric) -> None:
    """lambda1 of the unit ball in R^4 is j_{1,1}^2."""
    eig = lambda1_pole_ball(flat_cap, 1.0)
    assert eig.lambda1 == pytest.approx(J11**2, rel=1e-3)
    assert eig.volume == pytest.approx(math.pi**2 / 2.0, rel=1e-6)
    assert eig.eigenfunction[-1] == 0.0


def test_hemisphere_eigenvalue(unit_sphere: WarpedMetric) -> None:
    """The Dirichlet hemisphere of S^4 has lambda1 = 4 (the height function)."""
    eig = lambda1_pole_ball(unit_sphere, math.pi / 2.0)
    assert eig.lambda1 == pytest.approx(4.0, rel=1e-3)
    eig_far = lambda1_pole_ball(unit_sphere, math.pi / 2.0, pole=1)
    assert eig_far.lambda1 == pytest.approx(eig.lambda1, rel=1e-6)


def test_pole_ball_must_fit(unit_sphere: WarpedMetric, flat_cap: WarpedMetric) -> None:
    """Radii beyond the axis and open ends are refused."""
    with pytest.raises(ParameterError):
        lambda1_pole_ball(unit_sphere, 4.0)
    with pytest.raises(ParameterError):
        lambda1_pole_ball(flat_cap, 1.0, pole=1)


def test_cell_mesh_volume_matches_the_manifold(unit_sphere: WarpedMetric) -> None:
    """Cell volumes add up to Vol(S^4)."""
    cells = cell_mesh(unit_sphere, 48, 24)
    assert cells.volumes.sum() == pytest.approx(8.0 * math.pi**2 / 3.0, rel=1e-6)
    assert whole_domain(cells).volume == pytest.approx(cells.volumes.sum())
    with pytest.raises(ParameterError):
        cell_mesh(unit_sphere, 2, 2)


def test_domain_eigenvalue_agrees_with_the_radial_solver(flat_cap: WarpedMetric) -> None:
    """A pole ball on the quotient cell mesh reproduces j_{1,1}^2."""
    cells = cell_mesh(flat_cap, 96, 24)
    dom = ball_domain(flat_cap, cells, BallSpec(POLE, 1.0))
    eig = lambda1_domain(flat_cap, dom)
    assert eig.lambda1 == pytest.approx(J11**2, rel=0.05)
    assert dom.volume == pytest.approx(math.pi**2 / 2.0, rel=0.05)


def test_domain_eigenvalue_needs_a_dirichlet_boundary(unit_sphere: WarpedMetric, flat_cap: WarpedMetric) -> None:
    """The whole closed S^4 has no boundary; the whole flat cap has its open end."""
    cells = cell_mesh(unit_sphere, 32, 16)
    whole = whole_domain(cells)
    assert not whole.has_boundary
    with pytest.raises(ParameterError, match="no Dirichlet boundary"):
        lambda1_domain(unit_sphere, whole)
    assert whole.without_cell(10, 5).has_boundary
    assert whole_domain(cell_mesh(flat_cap, 32, 16)).has_boundary


def test_faber_krahn_is_scale_invariant_on_flat_space(flat_cap: WarpedMetric) -> None:
    """Vol^{1/2} lambda1 is the same for every Euclidean ball."""
    result = faber_krahn(flat_cap, BallSpec(POLE, 1.0), BallFamily((0.25, 0.5, 1.0)))
    expected = math.pi / math.sqrt(2.0) * J11**2
    assert len(result.values) == 3
    for value in result.values:
        assert value == pytest.approx(expected, rel=1e-2)
    assert result.value == min(result.values)
    with pytest.raises(ParameterError):
        faber_krahn(flat_cap, BallSpec(POLE, 1.0), [])


def test_sobolev_audit_passes_with_generous_constants(unit_sphere: WarpedMetric) -> None:
    """A = B = 1 dominates the sharp Sobolev constant of S^4."""
    report = sobolev_audit(unit_sphere, SobolevConstants(A=1.0, B=1.0))
    assert report.name == "sobolev"
    assert report.passed
    assert report.params["functions"] == 9
    assert report.params["violators"] == []


def test_sobolev_audit_fails_with_a_tiny_gradient_constant(unit_sphere: WarpedMetric) -> None:
    """Concentrated bumps beat A = 1e-3, B = 1."""
    report = sobolev_audit(unit_sphere, SobolevConstants(A=1e-3, B=1.0), BumpFamily(centers=(0.0,), widths=(0.1,)))
    assert report.failed
    assert report.params["violators"] == [(0.0, pytest.approx(0.1 * unit_sphere.length))]


def test_sobolev_audit_skips_bumps_crossing_an_open_end(flat_cap: WarpedMetric) -> None:
    """On the flat cap a bump reaching past the outer end is not admissible."""
    report = sobolev_audit(flat_cap, SobolevConstants(A=1.0, B=1.0), BumpFamily(centers=(0.9,), widths=(0.2,)))
    assert report.status == "skipped"
    assert report.params["skipped_functions"] == 1
    local = sobolev_audit(flat_cap, SobolevConstants(A=1.0, B=1.0), form="local")
    assert local.name == "sobolev-local"
