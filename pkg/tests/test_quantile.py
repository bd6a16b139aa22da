import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dqvc.exceptions import DataValidationError, InvalidInputError
from dqvc.quantile import (
    DirectionGrid,
    FunctionalDataset,
    check_loss,
    check_prox,
    design_matrix,
    project_responses,
    read_dataset_csv,
    soft_threshold,
    write_dataset_csv,
)
from dqvc.splines import build_basis, eval_basis
from oracles import grid_prox


def test_check_loss_values():
    assert check_loss(2.0, 0.3) == pytest.approx(0.6)
    assert check_loss(-2.0, 0.3) == pytest.approx(1.4)
    assert check_loss(0.0, 0.3) == 0.0
    assert np.allclose(check_loss([-1, 1], 0.5), [0.5, 0.5])


@pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5])
def test_check_loss_domain(tau):
    with pytest.raises(InvalidInputError):
        check_loss(1.0, tau)


def test_soft_threshold():
    assert np.allclose(soft_threshold(np.array([-3, -0.5, 0, 0.5, 3]), 1.0), [-2, 0, 0, 0, 2])


def test_prox_examples():
    assert check_prox(2.0, 0.5, 1.0) == pytest.approx(1.5)
    assert check_prox(1.0, 0.9, 10.0) == pytest.approx(0.91)
    assert grid_prox(1.0, 0.9, 10.0, 1.0) == pytest.approx(0.91, abs=1e-5)
    assert check_prox(0.01, 0.5, 1.0) == 0.0


@settings(max_examples=60, deadline=None)
@given(
    st.floats(-3, 3), st.floats(0.02, 0.98), st.floats(0.2, 5.0), st.floats(0.1, 3.0)
)
def test_prox_against_grid(v, tau, rho, w):
    assert abs(check_prox(v, tau, rho, w) - grid_prox(v, tau, rho, w)) <= 2e-5


def test_prox_rejects_nonpositive():
    with pytest.raises(InvalidInputError):
        check_prox(1.0, 0.5, 0.0)
    with pytest.raises(InvalidInputError):
        check_prox(1.0, 0.5, 1.0, w=-1.0)


def test_direction_grid():
    g = DirectionGrid(4)
    assert np.allclose(g.angles, [-np.pi, -np.pi / 2, 0, np.pi / 2])
    assert np.allclose(np.linalg.norm(g.directions, axis=1), 1)
    assert g.d0 == pytest.approx(np.sqrt(2))
    g = DirectionGrid(100)
    dist = g.chord_distances(3)
    assert dist[3] == 0
    assert dist[4] == pytest.approx(g.d0) and dist[2] == pytest.approx(g.d0)
    assert dist[53] == pytest.approx(2.0)
    assert np.allclose(dist, np.linalg.norm(g.directions - g.directions[3], axis=1))
    with pytest.raises(InvalidInputError):
        DirectionGrid(0)


def test_projection(small_data):
    s = np.array([0.6, 0.8])
    proj = project_responses(small_data, s)
    assert proj.shape == (small_data.n, small_data.J)
    assert np.allclose(proj, 0.6 * small_data.responses[..., 0] + 0.8 * small_data.responses[..., 1])
    with pytest.raises(InvalidInputError):
        project_responses(small_data, [1.0, 1.0])


def test_design_row_identity(small_data):
    basis = build_basis(3, [0.3, 0.6])
    X = design_matrix(small_data, basis)
    assert X.shape == (small_data.n * small_data.J, small_data.p * basis.M)
    C = np.random.default_rng(0).normal(size=(small_data.p, basis.M))
    H = eval_basis(basis, small_data.t_grid)
    i, j = 5, 3
    assert X[i * small_data.J + j] @ C.ravel() == pytest.approx(small_data.covariates[i] @ C @ H[j])


def test_dataset_validation():
    t = np.linspace(0, 1, 3)
    with pytest.raises(InvalidInputError):
        FunctionalDataset(t, np.zeros((2, 3, 3)), np.ones((2, 1)))
    with pytest.raises(InvalidInputError):
        FunctionalDataset(t, np.zeros((2, 3, 2)), np.ones((3, 1)))
    with pytest.raises(InvalidInputError):
        FunctionalDataset(t[::-1], np.zeros((2, 3, 2)), np.ones((2, 1)))
    Y = np.zeros((2, 3, 2))
    Y[0, 0, 0] = np.nan
    with pytest.raises(InvalidInputError):
        FunctionalDataset(t, Y, np.ones((2, 1)))


def test_subset(small_data):
    sub = small_data.subset([0, 2])
    assert sub.n == 2 and sub.subject_ids == ("id0", "id2")


def test_csv_round_trip(small_data, tmp_path):
    path = tmp_path / "d.csv"
    write_dataset_csv(small_data, path)
    back = read_dataset_csv(path)
    assert np.array_equal(back.responses, small_data.responses)
    assert np.array_equal(back.covariates, small_data.covariates)
    assert np.array_equal(back.t_grid, small_data.t_grid)
    assert back.subject_ids == small_data.subject_ids
    assert back.p == 3


def _write(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    return p


def test_csv_errors(tmp_path):
    with pytest.raises(DataValidationError, match="y2"):
        read_dataset_csv(_write(tmp_path, "subject_id,t,y1,x1\na,0,1,1\n"))
    with pytest.raises(DataValidationError) as exc:
        read_dataset_csv(_write(tmp_path, "subject_id,t,y1,y2,x1\na,0,1,1,1\na,1,zz,1,1\na,0.5,,1,1\n"))
    assert exc.value.rows == [3, 4]
    with pytest.raises(DataValidationError, match="grid"):
        read_dataset_csv(_write(tmp_path, "subject_id,t,y1,y2,x1\na,0,1,1,1\na,1,1,1,1\nb,0,1,1,1\nb,.5,1,1,1\n"))
    with pytest.raises(DataValidationError, match="vary"):
        read_dataset_csv(_write(tmp_path, "subject_id,t,y1,y2,x1\na,0,1,1,1\na,1,1,1,2\n"))
    with pytest.raises(DataValidationError, match="x1..xp"):
        read_dataset_csv(_write(tmp_path, "subject_id,t,y1,y2,x2\na,0,1,1,1\n"))
    with pytest.raises(DataValidationError, match="no data"):
        read_dataset_csv(_write(tmp_path, "subject_id,t,y1,y2,x1\n"))
