import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dqvc.envelope import (
    build_envelope,
    contains,
    coverage,
    curvature,
    directional_quantiles,
    inside_mask,
    write_envelopes_json,
    write_vertices_csv,
)
from dqvc.exceptions import InvalidInputError, UndefinedMetricError
from dqvc.ps import CoefficientField
from dqvc.quantile import DirectionGrid
from dqvc.splines import build_basis


def test_square_fixture():
    env = build_envelope(DirectionGrid(4), -np.ones(4))
    assert not env.empty
    assert sorted(map(tuple, env.vertices.tolist())) == [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    assert env.area == pytest.approx(4.0)
    assert sorted(env.binding) == [0, 1, 2, 3]


def test_circumscribed_polygon_area():
    d = 100
    env = build_envelope(DirectionGrid(d), -np.ones(d))
    assert len(env.vertices) == d
    assert env.area == pytest.approx(d * np.tan(np.pi / d), abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_translation_equivariance(a, b):
    grid = DirectionGrid(30)
    q = -1.0 - 0.3 * np.cos(3 * grid.angles) ** 2
    v = np.array([a, b])
    e0 = build_envelope(grid, q)
    e1 = build_envelope(grid, q + grid.directions @ v)
    assert np.abs(e1.vertices - (e0.vertices + v)).max() < 1e-9


def test_empty_envelope_is_flagged():
    env = build_envelope(DirectionGrid(4), np.ones(4))
    assert env.empty and env.area == 0.0 and env.to_dict()["vertices"] == []
    with pytest.raises(UndefinedMetricError):
        curvature(env)


def test_unbounded_side_is_clipped_by_box():
    # only one halfplane: box corners survive
    env = build_envelope(np.array([[1.0, 0.0]]), np.array([0.0]))
    assert env.vertices[:, 0].min() == pytest.approx(0.0)
    assert env.vertices[:, 0].max() == pytest.approx(5e5)


def test_containment_and_coverage():
    grid = DirectionGrid(4)
    q = -np.ones(4)
    assert contains(grid, q, [0.5, 0.5])
    assert contains(grid, q, [1.0, 1.0])
    assert not contains(grid, q, [1.0 + 1e-12, 0.0])
    assert coverage(grid, q, [[0, 0], [2, 2], [0.9, -0.9], [5, 0]]) == 0.5
    with pytest.raises(InvalidInputError):
        coverage(grid, q, np.empty((0, 2)))


def _in_polygon(v, p):
    e = np.roll(v, -1, axis=0) - v
    rel = p - v
    return np.all(e[:, 0] * rel[:, 1] - e[:, 1] * rel[:, 0] >= -1e-9)


def test_constraint_and_polygon_membership_agree():
    rng = np.random.default_rng(0)
    grid = DirectionGrid(50)
    q = -1.2 + 0.2 * rng.random(50)
    env = build_envelope(grid, q)
    pts = rng.uniform(-1.5, 1.5, size=(2000, 2))
    inside = inside_mask(grid, q, pts)
    poly = np.array([_in_polygon(env.vertices, p) for p in pts])
    # points within 1e-9 of the boundary can legitimately differ
    slack = np.min(pts @ grid.directions.T - q, axis=1)
    clear = np.abs(slack) > 1e-8
    assert np.array_equal(inside[clear], poly[clear])


@pytest.mark.parametrize("R", [0.5, 1.0, 3.0])
def test_curvature_of_regular_polygon(R):
    d = 100
    env = build_envelope(DirectionGrid(d), -R * np.ones(d))
    assert curvature(env) == pytest.approx(1 / R, rel=1e-3)


def test_curvature_orders_by_size():
    grid = DirectionGrid(60)
    small = curvature(build_envelope(grid, -np.ones(60)))
    big = curvature(build_envelope(grid, -2 * np.ones(60)))
    assert big < small


def test_directional_quantiles_shape_checks():
    basis = build_basis(0, [])
    grid = DirectionGrid(4)
    f = CoefficientField(grid, 0.1, -np.ones((4, 2)), np.ones((4, 2)), 2, 1, 0.0)
    assert np.allclose(directional_quantiles(f, basis, [1.0, 0.5], 0.3), -1.5)
    with pytest.raises(InvalidInputError):
        directional_quantiles(f, basis, [1.0], 0.3)
    with pytest.raises(InvalidInputError):
        directional_quantiles(f, build_basis(3, []), [1.0, 0.5], 0.3)


def test_writers(tmp_path):
    grid = DirectionGrid(4)
    envs = [build_envelope(grid, -np.ones(4), tau=0.1, t=0.5, x=[1.0]), build_envelope(grid, np.ones(4), tau=0.1, t=0.6)]
    write_envelopes_json(envs, tmp_path / "e.json", {"format_version": 1})
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc["format_version"] == 1 and len(doc["envelopes"]) == 2
    assert doc["envelopes"][1]["empty"] is True
    write_vertices_csv(envs, tmp_path / "v.csv")
    lines = (tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "envelope,tau,t,vertex,v1,v2" and len(lines) == 5
