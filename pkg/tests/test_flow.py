import math

import numpy as np
import pytest

from rflab.errors import ParameterError
from rflab.flow import (
    PRESETS,
    FlowController,
    Trajectory,
    critical_radius,
    estimate_singular_time,
    evolve,
    make_preset,
    monitor_hypotheses,
    rescale_trajectory,
    smooth_step,
    step,
)
from rflab.geometry import WarpedMetric, curvature, total_volume, volume_integral


@pytest.mark.parametrize("kind", PRESETS)
def test_every_preset_builds_with_smooth_poles(kind: str) -> None:
    """Each catalogued metric passes construction and the pole check."""
    m = make_preset(kind, node_count=201)
    assert m.grid.node_count == 201
    assert np.all(np.isfinite(curvature(m).scalar))


def test_unknown_preset_and_bad_parameters() -> None:
    """Unknown names and inadmissible parameters raise ParameterError."""
    with pytest.raises(ParameterError):
        make_preset("torus")
    with pytest.raises(ParameterError):
        make_preset("dumbbell", {"bulb_radius": 1.0, "neck_radius": 0.8})
    with pytest.raises(ParameterError):
        make_preset("round_sphere", {"radius": "big"})


def test_smooth_step_limits() -> None:
    """0 below 0, 1 above 1 and one half in the middle."""
    values = smooth_step(np.array([-1.0, 0.0, 0.5, 1.0, 2.0]))
    assert values.tolist()[:2] == [0.0, 0.0]
    assert values[2] == pytest.approx(0.5)
    assert values.tolist()[3:] == [1.0, 1.0]


def test_critical_radius_finds_the_neck() -> None:
    """The dumbbell neck is its smallest interior critical radius."""
    m = make_preset("dumbbell", {"bulb_radius": 1.0, "neck_radius": 0.2}, node_count=301)
    assert critical_radius(m) == pytest.approx(0.2, rel=1e-6)


def test_step_validates_dt(unit_sphere: WarpedMetric) -> None:
    """dt = 0 is the identity and negative dt is refused."""
    assert step(unit_sphere, 0.0) is unit_sphere
    with pytest.raises(ParameterError):
        step(unit_sphere, -1e-3)


def test_controller_validation() -> None:
    """Out-of-range controller settings are rejected."""
    with pytest.raises(ParameterError):
        FlowController(cfl_fraction=0.9)
    with pytest.raises(ParameterError):
        FlowController(regrid_policy="adaptive")  # type: ignore[arg-type]
    with pytest.raises(ParameterError):
        FlowController(checkpoint_stride=0.0)


@pytest.fixture(scope="module")
def sphere_400() -> Trajectory:
    m0 = make_preset("round_sphere", {"radius": 1.0}, node_count=400)
    return evolve(m0, FlowController(cfl_fraction=0.4, checkpoint_stride=0.01, t_max=0.15))


def _shrink_error(traj: Trajectory) -> float:
    first, last = traj.checkpoints[0], traj.checkpoints[-1]
    ratio = last.psi[1:-1] / first.psi[1:-1]
    return float(np.max(np.abs(ratio / math.sqrt(1.0 - 6.0 * last.time) - 1.0)))


def test_round_sphere_shrinks_homothetically() -> None:
    """psi(t) = sqrt(1 - 6t) sin s on the unit S^4, poles included."""
    m0 = make_preset("round_sphere", {"radius": 1.0}, node_count=61)
    traj = evolve(m0, FlowController(checkpoint_stride=0.01, t_max=0.15))
    assert traj.stop_reason == "t-max"
    assert traj.end == pytest.approx(0.15)
    assert len(traj) >= 15
    last = traj.checkpoints[-1]
    assert _shrink_error(traj) < 1e-5
    assert np.allclose(last.phi, math.sqrt(0.1) * m0.phi, rtol=1e-5)
    assert np.allclose(curvature(last).scalar, 120.0, rtol=1e-3)
    assert traj.settings["t_max"] == pytest.approx(0.15)


def test_round_sphere_at_400_nodes_matches_the_closed_form(sphere_400: Trajectory) -> None:
    """Relative error below 1e-4 at t = 0.15 and T within 0.005 of 1/6."""
    assert sphere_400.stop_reason == "t-max"
    assert sphere_400.end == pytest.approx(0.15)
    assert _shrink_error(sphere_400) < 1e-4
    T = sphere_400.singular_time_estimate
    assert T is not None and abs(T - 1.0 / 6.0) < 0.005


def test_round_sphere_error_falls_under_grid_doubling() -> None:
    """Halving the spacing cuts the error by more than 2^1.8."""
    errors = []
    for nodes in (61, 121):
        m0 = make_preset("round_sphere", {"radius": 1.0}, node_count=nodes)
        errors.append(_shrink_error(evolve(m0, FlowController(cfl_fraction=0.4, checkpoint_stride=0.05, t_max=0.05))))
    assert errors[1] < errors[0] / 2.0**1.8


def test_volume_derivative_is_minus_total_scalar(sphere_400: Trajectory) -> None:
    """d/dt Vol = -int R dV, by central differences of checkpoint volumes."""
    vols = np.array([total_volume(m) for m in sphere_400.checkpoints])
    dv = (vols[2:] - vols[:-2]) / (sphere_400.times[2:] - sphere_400.times[:-2])
    rhs = np.array([-volume_integral(m, curvature(m).scalar) for m in sphere_400.checkpoints[1:-1]])
    assert np.allclose(dv, rhs, rtol=0.02)


def test_neckpinch_stops_on_the_neck_radius() -> None:
    """A neck of radius 0.15 pinches near the cylinder time 0.15^2 / 4, long before the bulbs."""
    m0 = make_preset("dumbbell", {"bulb_radius": 1.0, "neck_radius": 0.15})
    traj = evolve(m0, FlowController(checkpoint_stride=2.5e-4))
    assert traj.stop_reason == "min-psi"
    T = traj.singular_time_estimate
    assert T is not None and T < 1.0 / 6.0
    assert T == pytest.approx(0.15**2 / 4.0, rel=0.1)
    last = traj.checkpoints[-1]
    k = curvature(last)
    assert k.k_radial[0] == k.k_sphere[0]
    assert k.scalar[0] == pytest.approx(12.0 / (1.0 - 6.0 * last.time), rel=0.02)


def test_flat_cap_is_a_fixed_point_of_one_step(flat_cap: WarpedMetric) -> None:
    """One step on flat data leaves the curvature at zero."""
    after = step(flat_cap, 1e-4)
    assert np.max(np.abs(curvature(after).rm_norm)) < 1e-10


def test_evolve_stops_on_curvature() -> None:
    """A small sphere exceeds the curvature cap right away."""
    m0 = make_preset("round_sphere", {"radius": 0.1}, node_count=61)
    traj = evolve(m0, FlowController(stop_max_rm=100.0))
    assert traj.stop_reason == "max-rm"
    assert len(traj) == 1
    assert traj.steps == 0


def test_estimate_singular_time_from_a_linear_radius() -> None:
    """rho^2 = 1 - 6t vanishes at T = 1/6."""
    t = np.linspace(0.0, 0.1, 12)
    assert estimate_singular_time(t, np.sqrt(1.0 - 6.0 * t)) == pytest.approx(1.0 / 6.0)
    assert estimate_singular_time(t[:2], np.ones(2)) is None
    assert estimate_singular_time(t, np.sqrt(1.0 + t)) is None


def test_trajectory_interpolates_between_checkpoints(shrinking: Trajectory) -> None:
    """metric_at is linear in time between neighbouring checkpoints."""
    a, b = shrinking.checkpoints[2], shrinking.checkpoints[3]
    mid = shrinking.metric_at(0.5 * (a.time + b.time))
    assert np.allclose(mid.psi, 0.5 * (a.psi + b.psi))
    assert shrinking.metric_at(a.time) is a
    with pytest.raises(ParameterError):
        shrinking.metric_at(1.0)


def test_trajectory_nodes_and_windows(shrinking: Trajectory) -> None:
    """nodes() keeps both ends plus the interior checkpoints."""
    nodes = shrinking.nodes(0.015, 0.045)
    assert nodes.tolist() == pytest.approx([0.015, 0.02, 0.03, 0.04, 0.045])
    assert shrinking.window(0.0, 0.025).tolist() == [0, 1, 2]
    assert shrinking.covers(0.0, 0.12)
    assert not shrinking.covers(0.0, 0.2)


def test_trajectory_rejects_unordered_times(unit_sphere: WarpedMetric) -> None:
    """Times must increase strictly."""
    with pytest.raises(ParameterError):
        Trajectory.static(unit_sphere, np.array([0.0, 0.0]))


def test_rescale_trajectory_scales_time_and_singularity(shrinking: Trajectory) -> None:
    """C g(t / C) lives on times C t and becomes singular at C T."""
    big = rescale_trajectory(shrinking, 2.0)
    assert big.times == pytest.approx(2.0 * shrinking.times)
    assert big.singular_time_estimate == pytest.approx(1.0 / 3.0)
    assert np.allclose(curvature(big.checkpoints[0]).scalar, 6.0, rtol=1e-3)


def test_monitor_hypotheses_on_the_shrinking_sphere(shrinking: Trajectory) -> None:
    """R stays positive and int |R|^{2 + sigma} blows up like (T - t)^{-sigma}."""
    report = monitor_hypotheses(shrinking, sigma=0.5, L=1e6)
    assert report.passed
    assert report.first_violation_time is None
    assert report.r_min_over_time == pytest.approx(12.0, rel=1e-3)
    assert report.blowup_exponent == pytest.approx(0.5, rel=1e-2)
    assert np.all(np.diff(report.lp_series) > 0.0)

    strict = monitor_hypotheses(shrinking, sigma=0.5, L=1.0)
    assert not strict.passed
    assert strict.first_violation_time == 0.0
