import math

import numpy as np
import pytest

from rflab.errors import ConstructionFailedError, CoverageError, ParameterError
from rflab.estimates import NonInflateConstants
from rflab.flow import Trajectory
from rflab.geometry import BallSpec, QuotientPoint, WarpedMetric
from rflab.heat import (
    CELL_SHAPE,
    MoserParams,
    cutoff_construct,
    kernel_bounds_audit,
    moser_audit,
    moser_constants,
    ricci_moser_field,
    solve_conjugate_heat,
    solve_heat,
)
from rflab.spectral import cell_distances, cell_mesh

POLE = QuotientPoint(0.0)


def test_heat_decays_like_the_first_eigenfunction(unit_sphere: WarpedMetric) -> None:
    """1 + cos s on S^4 evolves to 1 + e^{-4t} cos s, with constant mass."""
    traj = Trajectory.static(unit_sphere, np.array([0.0, 0.1]))
    f0 = 1.0 + np.cos(unit_sphere.s)
    h = solve_heat(traj, None, f0, 0.0, 0.0, 0.1)
    expected = 1.0 + math.exp(-0.4) * np.cos(unit_sphere.s)
    assert np.allclose(h.values[-1], expected, atol=1e-2)
    mass = h.mass()
    assert mass[-1] == pytest.approx(mass[0], rel=1e-10)
    assert h.kind == "heat"


def test_reaction_term_integrates_exactly(unit_sphere: WarpedMetric) -> None:
    """With ell = 1, constant data grows like t."""
    traj = Trajectory.static(unit_sphere, np.array([1.0, 2.0]))
    h = solve_heat(traj, None, np.full(201, 3.0), 1.0, 1.0, 2.0)
    assert np.allclose(h.values[-1], 6.0, rtol=1e-9)
    assert np.allclose(h.at(1.5), 4.5, rtol=1e-9)


def test_heat_rejects_bad_inputs(unit_sphere: WarpedMetric) -> None:
    """Negative data, a reaction from t = 0, uncovered windows and mismatched data are refused."""
    traj = Trajectory.static(unit_sphere, np.array([0.0, 1.0]))
    ones = np.ones(201)
    with pytest.raises(ParameterError):
        solve_heat(traj, None, -ones, 0.0, 0.0, 0.5)
    with pytest.raises(ParameterError):
        solve_heat(traj, None, ones, 1.0, 0.0, 0.5)
    with pytest.raises(CoverageError):
        solve_heat(traj, None, ones, 0.0, 0.0, 2.0)
    with pytest.raises(ParameterError, match="match the grid"):
        solve_heat(traj, None, np.ones(7), 0.0, 0.0, 0.5)
    with pytest.raises(ParameterError, match="cell mesh"):
        solve_heat(traj, None, np.ones((3, 3)), 0.0, 0.0, 0.5)
    with pytest.raises(ParameterError, match="no cell centre"):
        solve_heat(traj, BallSpec(QuotientPoint(1.0, 1.0), 1e-4), ones, 0.0, 0.0, 0.5)


def test_dirichlet_ball_keeps_the_outside_at_zero(unit_sphere: WarpedMetric) -> None:
    """Outside a pole ball the solution vanishes; inside it decays."""
    traj = Trajectory.static(unit_sphere, np.array([0.0, 0.05]))
    h = solve_heat(traj, BallSpec(POLE, 1.0), np.ones(201), 0.0, 0.0, 0.05)
    outside = unit_sphere.s >= 1.0
    assert np.all(h.values[-1][outside] == 0.0)
    assert np.all(h.values[-1] <= 1.0 + 1e-12)
    assert h.mass()[-1] < h.mass()[0]


def test_off_pole_ball_decays_like_the_hemisphere(unit_sphere: WarpedMetric) -> None:
    """A ball of radius pi/2 about an equator point is a hemisphere: mass falls like e^{-4t}."""
    x = QuotientPoint(math.pi / 2.0, 0.0)
    traj = Trajectory.static(unit_sphere, np.linspace(0.0, 0.4, 5))
    h = solve_heat(traj, BallSpec(x, math.pi / 2.0), np.ones(201), 0.0, 0.0, 0.4)
    assert h.on_cells
    assert h.values.shape == (5, *CELL_SHAPE)
    d = cell_distances(unit_sphere, h.cells_at(traj, 0.4), x)
    assert np.all(h.values[-1][d >= math.pi / 2.0] == 0.0)
    assert np.all(h.values <= 1.0 + 1e-12)
    mass = h.mass()
    assert mass[4] / mass[2] == pytest.approx(math.exp(-0.8), rel=0.06)


def test_cell_data_without_boundary_keeps_its_mass(unit_sphere: WarpedMetric) -> None:
    """Per-cell initial data on the closed S^4 spreads out with its mass fixed."""
    traj = Trajectory.static(unit_sphere, np.array([0.0, 0.05]))
    f0 = np.zeros((32, 16))
    f0[:4] = 1.0
    h = solve_heat(traj, None, f0, 0.0, 0.0, 0.05, cell_shape=(32, 16))
    assert h.cell_shape == (32, 16)
    mass = h.mass()
    assert mass[-1] == pytest.approx(mass[0], rel=1e-9)
    assert np.all((h.values[-1] >= 0.0) & (h.values[-1] <= 1.0 + 1e-12))
    assert h.values[-1][4:].max() > 0.0


def test_conjugate_kernel_on_flat_space(flat_cap: WarpedMetric) -> None:
    """At the source the kernel approaches (4 pi tau)^{-2}; its mass stays 1."""
    traj = Trajectory.static(flat_cap, np.array([0.0, 0.05]))
    G = solve_conjugate_heat(traj, POLE, 0.05, 0.0)
    assert G.kind == "conjugate"
    assert G.times[0] == 0.0 and G.times[-1] == 0.05
    assert G.values[0][0] == pytest.approx((4.0 * math.pi * 0.05) ** -2, rel=0.05)
    assert G.mass()[0] == pytest.approx(1.0, rel=1e-6)


def test_conjugate_kernel_mass_decays_with_scalar_curvature(unit_sphere: WarpedMetric) -> None:
    """On a static S^4 the mass is e^{-12 (t - l)}."""
    traj = Trajectory.static(unit_sphere, np.array([0.0, 0.05]))
    G = solve_conjugate_heat(traj, POLE, 0.05, 0.0)
    assert G.mass()[-1] == pytest.approx(1.0, rel=1e-9)
    assert G.mass()[0] == pytest.approx(math.exp(-0.6), rel=2e-3)


def test_conjugate_kernel_is_read_between_checkpoints(unit_sphere: WarpedMetric) -> None:
    """Requested sample times become nodes of the kernel."""
    traj = Trajectory.static(unit_sphere, np.array([0.0, 0.05]))
    G = solve_conjugate_heat(traj, POLE, 0.05, 0.0, samples=[0.025, 0.2])
    assert G.times.tolist() == pytest.approx([0.0, 0.025, 0.05])
    assert G.mass()[G.index(0.025)] == pytest.approx(math.exp(-0.3), rel=2e-3)
    mass, _ = kernel_bounds_audit(G, NonInflateConstants(c1=1e-3), traj, POLE, 0.05, 0.025)
    assert mass.passed


def test_conjugate_kernel_rejects_empty_windows(unit_sphere: WarpedMetric) -> None:
    """l_min must lie below the source time."""
    traj = Trajectory.static(unit_sphere, np.array([0.0, 1.0]))
    with pytest.raises(ParameterError):
        solve_conjugate_heat(traj, POLE, 0.5, 0.5)
    with pytest.raises(ParameterError):
        solve_conjugate_heat(traj, QuotientPoint(1.0), 0.5, 0.6)


def test_off_pole_conjugate_kernel_mass_decays_with_scalar_curvature(unit_sphere: WarpedMetric) -> None:
    """Sourced away from the poles of a static S^4 the mass is still e^{-12 (t - l)}."""
    traj = Trajectory.static(unit_sphere, np.array([0.0, 0.05]))
    G = solve_conjugate_heat(traj, QuotientPoint(1.0, 0.5), 0.05, 0.0)
    assert G.on_cells
    assert G.values.shape == (2, *CELL_SHAPE)
    assert G.mass()[-1] == pytest.approx(1.0, rel=1e-9)
    assert G.mass()[0] == pytest.approx(math.exp(-0.6), rel=2e-3)


def test_off_pole_conjugate_kernel_on_flat_space(flat_cap: WarpedMetric) -> None:
    """Away from the pole the kernel still peaks near (4 pi tau)^{-2} and keeps mass 1."""
    x = QuotientPoint(1.0, 0.0)
    traj = Trajectory.static(flat_cap, np.array([0.0, 0.05]))
    G = solve_conjugate_heat(traj, x, 0.05, 0.0)
    assert G.values[0].max() == pytest.approx((4.0 * math.pi * 0.05) ** -2, rel=0.1)
    assert G.mass()[0] == pytest.approx(1.0, rel=1e-6)

    mass, lower = kernel_bounds_audit(G, NonInflateConstants(c1=1e-3), traj, x, 0.05, 0.0)
    assert mass.passed
    assert lower.passed
    assert lower.lhs == pytest.approx(1.0 / (16.0 * math.pi**2), rel=0.1)
    assert lower.params["samples"] > 0


def test_kernel_bounds_on_flat_space(flat_cap: WarpedMetric) -> None:
    """Mass stays below 1 + C0 (1 + tau)^2 and the Gaussian constant is about 1/(16 pi^2)."""
    traj = Trajectory.static(flat_cap, np.array([0.0, 0.05]))
    G = solve_conjugate_heat(traj, POLE, 0.05, 0.0)
    mass, lower = kernel_bounds_audit(G, NonInflateConstants(c1=1e-3), traj, POLE, 0.05, 0.0)
    assert mass.passed
    assert lower.passed
    assert lower.lhs == pytest.approx(1.0 / (16.0 * math.pi**2), rel=0.05)

    _, strict = kernel_bounds_audit(G, NonInflateConstants(c1=1.0), traj, POLE, 0.05, 0.0)
    assert strict.failed

    h = solve_heat(traj, None, np.ones(201), 0.0, 0.0, 0.05)
    with pytest.raises(ParameterError):
        kernel_bounds_audit(h, NonInflateConstants(), traj, POLE, 0.05, 0.0)


def test_cutoff_on_flat_space(flat_cap: WarpedMetric) -> None:
    """alpha_u = 12 with eps = 1/2 passes every check between r1 = 1 and r2 = 2."""
    traj = Trajectory.static(flat_cap, np.array([0.0, 1.0]))
    cut = cutoff_construct(traj, POLE, 1.0, 2.0, 0.5, alpha_u=12.0)
    assert cut.sigma_c == pytest.approx(24.0)
    assert cut.T_hat == pytest.approx(1.0)
    assert np.all((cut.values >= 0.0) & (cut.values <= 1.0))
    inner = flat_cap.s <= 1.0
    assert np.allclose(cut.values[-1][inner], math.exp(-24.0))
    assert np.all(cut.values[0][flat_cap.s >= 2.0] == 0.0)
    assert cut.worst_slack <= 1e-3
    assert cut.worst_gradient <= 24.0


def test_cutoff_on_a_sphere(unit_sphere: WarpedMetric) -> None:
    """alpha_u = 20 is enough on S^4 between r1 = 1/2 and r2 = 1."""
    traj = Trajectory.static(unit_sphere, np.array([0.0, 0.25]))
    cut = cutoff_construct(traj, POLE, 0.5, 1.0, 0.5, alpha_u=20.0)
    assert cut.T_hat == pytest.approx(0.25)
    assert cut.times[-1] == pytest.approx(0.25)


def test_cutoff_with_weak_decay_fails(flat_cap: WarpedMetric) -> None:
    """A small alpha_u cannot dominate the Laplacian of the profile."""
    traj = Trajectory.static(flat_cap, np.array([0.0, 1.0]))
    with pytest.raises(ConstructionFailedError) as info:
        cutoff_construct(traj, POLE, 1.0, 2.0, 0.5, alpha_u=0.1)
    assert info.value.location is not None


def test_off_pole_cutoff_on_flat_space(flat_cap: WarpedMetric) -> None:
    """About an off-axis centre the cut-off is 1 on B(x, r1), 0 outside B(x, r2) and passes."""
    x = QuotientPoint(1.0, 0.0)
    traj = Trajectory.static(flat_cap, np.array([0.0, 0.09]))
    cut = cutoff_construct(traj, x, 0.3, 0.6, 0.5, alpha_u=24.0)
    assert cut.cell_shape == CELL_SHAPE
    assert cut.T_hat == pytest.approx(0.09)
    d = cell_distances(flat_cap, cell_mesh(flat_cap, *CELL_SHAPE, material=True), x)
    assert np.all((cut.values >= 0.0) & (cut.values <= 1.0))
    assert np.all(cut.values[0][d <= 0.3] == 1.0)
    assert np.all(cut.values[0][d >= 0.6] == 0.0)
    assert cut.worst_slack <= 1e-3
    assert cut.worst_gradient <= 24.0 / (0.5 * 0.3) * (1.0 + 1e-3)

    with pytest.raises(ConstructionFailedError):
        cutoff_construct(traj, x, 0.3, 0.6, 0.5, alpha_u=0.1)


def test_moser_constant_closed_form() -> None:
    """K1 for n = p = 4, A = c1 = alpha = 1 is 2 * 1.5^4.5 * e^3."""
    const = moser_constants(MoserParams(p=4.0))
    assert const.K == pytest.approx(2.0 * 1.5**4.5 * math.exp(3.0))
    assert const.K == pytest.approx(249.1, rel=1e-3)
    assert const.case == "p_ge_2"
    assert const.T_hat == pytest.approx(0.25)

    low = moser_constants(MoserParams(p=1.5, gamma=0.9))
    assert low.case == "p_lt_2"


def test_moser_params_validation() -> None:
    """ell >= 1, and p < 2 needs an admissible gamma."""
    with pytest.raises(ParameterError):
        MoserParams(ell=0.5)
    with pytest.raises(ParameterError):
        MoserParams(p=1.5)
    with pytest.raises(ParameterError):
        MoserParams(p=1.5, gamma=0.5)


def test_moser_audit_on_a_static_sphere(unit_sphere: WarpedMetric) -> None:
    """sup f at t = 0.1 stays far below the Moser bound."""
    traj = Trajectory.static(unit_sphere, np.array([0.01, 0.2]))
    h = solve_heat(traj, None, np.ones(201), 1.0, 0.01, 0.2)
    report = moser_audit(h, traj, POLE, 1.0, 2.0, 0.1, MoserParams())
    assert report.passed
    assert report.lhs == pytest.approx(10.0, rel=1e-6)
    assert report.params["K_star"] < report.params["K"]

    late = moser_audit(h, traj, POLE, 1.0, 2.0, 0.19, MoserParams(r=0.5))
    assert late.status == "skipped"


def test_moser_audit_about_an_off_pole_centre(unit_sphere: WarpedMetric) -> None:
    """A Dirichlet ball about an equator point gives a cell field the audit accepts."""
    x = QuotientPoint(math.pi / 2.0, 0.0)
    traj = Trajectory.static(unit_sphere, np.array([0.01, 0.2]))
    h = solve_heat(traj, BallSpec(x, 1.0), np.ones(201), 1.0, 0.01, 0.2)
    assert h.on_cells
    report = moser_audit(h, traj, x, 1.0, 2.0, 0.1, MoserParams())
    assert report.passed
    assert 0.0 < report.lhs <= 10.0 + 1e-9
    assert report.params["space_time_integral"] > 0.0


def test_ricci_moser_field_on_a_static_sphere(unit_sphere: WarpedMetric) -> None:
    """f = sqrt(|Ric|^2 + eps) = 6 and ell = sup t |Rm| = sqrt(24)."""
    traj = Trajectory.static(unit_sphere, np.array([0.0, 1.0]))
    h = ricci_moser_field(traj)
    assert h.kind == "ricci"
    assert np.allclose(h.values, 6.0, rtol=1e-3)
    assert h.ell == pytest.approx(math.sqrt(24.0), rel=1e-3)
    with pytest.raises(ParameterError):
        ricci_moser_field(traj, eps=0.0)
