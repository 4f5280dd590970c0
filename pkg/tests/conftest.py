"""Shared backgrounds: round and flat metrics plus the exact shrinking sphere."""

from __future__ import annotations

import numpy as np
import pytest

from rflab.flow import Trajectory, make_preset
from rflab.geometry import WarpedMetric, rescale


def shrinking_sphere(node_count: int, times: np.ndarray) -> Trajectory:
    """g(t) = (1 - 6t) g_0 on the unit S^4, checkpoint by checkpoint."""
    m0 = make_preset("round_sphere", {"radius": 1.0}, node_count=node_count)
    checkpoints = []
    for t in times:
        g = rescale(m0, 1.0 - 6.0 * t)
        checkpoints.append(g.with_arrays(g.phi, g.psi, float(t)))
    return Trajectory(
        checkpoints=checkpoints,
        times=np.asarray(times, dtype=float),
        singular_time_estimate=1.0 / 6.0,
        stop_reason="t-max",
    )


@pytest.fixture
def unit_sphere() -> WarpedMetric:
    return make_preset("round_sphere", {"radius": 1.0}, node_count=201)


@pytest.fixture
def flat_cap() -> WarpedMetric:
    return make_preset("euclidean_cap", {"radius": 2.0}, node_count=201)


@pytest.fixture
def shrinking() -> Trajectory:
    return shrinking_sphere(201, np.linspace(0.0, 0.12, 13))


@pytest.fixture
def make_shrinking():
    return shrinking_sphere
