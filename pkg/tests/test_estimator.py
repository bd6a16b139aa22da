import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dqvc.estimator import DirectionalQuantileRegressor, PenalizedQuantileRegressor
from dqvc.exceptions import InvalidInputError
from dqvc.ps import PsOptions, run_multistage
from dqvc.quantile import DirectionGrid
from dqvc.splines import build_basis, evenly_spaced_knots
from conftest import make_dataset


def test_pqr_median():
    m = PenalizedQuantileRegressor(tau=0.5).fit(np.ones((5, 1)), np.arange(1.0, 6.0))
    assert abs(m.coef_[0] - 3) < 0.05 and m.converged_
    assert m.predict(np.ones((2, 1))).shape == (2,)


def test_pqr_params_and_clone():
    m = PenalizedQuantileRegressor(tau=0.2, lam=0.3)
    assert m.get_params()["lam"] == 0.3
    c = clone(m).set_params(tau=0.7)
    assert c.tau == 0.7 and m.tau == 0.2
    with pytest.raises(NotFittedError):
        m.predict(np.ones((1, 1)))


def test_pqr_input_checks():
    X = np.ones((5, 2))
    with pytest.raises(ValueError):
        PenalizedQuantileRegressor().fit(X, np.ones(4))
    with pytest.raises(InvalidInputError):
        PenalizedQuantileRegressor(omega=np.eye(3)).fit(X, np.ones(5))
    m = PenalizedQuantileRegressor().fit(X, np.ones(5))
    with pytest.raises(InvalidInputError):
        m.predict(np.ones((1, 3)))


def test_directional_matches_functional_api():
    data = make_dataset(n=30, J=8)
    est = DirectionalQuantileRegressor(tau=0.3, d=10, knot_count=2, C=2, lam=0.1)
    est.fit(data.covariates, data.responses, data.t_grid)
    basis = build_basis(3, evenly_spaced_knots(2))
    init, final, trace = run_multistage(data, basis, DirectionGrid(10), 0.3, PsOptions(C=2, lam=0.1))
    assert np.array_equal(est.field_.coeffs, final.coeffs)
    assert np.array_equal(est.initial_field_.coeffs, init.coeffs)
    assert est.lambda_ == 0.1 and len(est.trace_) == len(trace)
    q = est.predict_quantiles([1, 1, 0.5], 0.7)
    assert q.shape == (10,)
    assert est.predict(data.covariates[:4], 0.5).shape == (4, 10)
    env = est.envelope([1, 1, 0.5], 0.7)
    assert env.tau == 0.3 and env.t == 0.7


def test_directional_validation():
    est = DirectionalQuantileRegressor()
    with pytest.raises(NotFittedError):
        est.predict_quantiles([1.0], 0.5)
    with pytest.raises(InvalidInputError):
        est.fit(np.ones((4, 2)), np.ones((4, 3, 3)))
    assert "alpha" in est.get_params()
