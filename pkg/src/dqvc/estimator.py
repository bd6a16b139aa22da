"""Scikit-learn style wrappers around the functional API."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .admm import AdmmOptions, solve_pqr
from .envelope import build_envelope, directional_quantiles
from .exceptions import InvalidInputError
from .ps import DEFAULT_LAMBDA_GRID, PsOptions, run_multistage
from .quantile import DirectionGrid, FunctionalDataset
from .splines import build_basis, evenly_spaced_knots


class PenalizedQuantileRegressor(RegressorMixin, BaseEstimator):
    """Linear quantile regression with an optional quadratic penalty.

    Minimizes ``sum check_loss(y - X b) + lam * b' Omega b`` by ADMM. No
    intercept column is added; include one in ``X`` if wanted.

    Parameters
    ----------
    tau : float
        Quantile level in (0, 1).
    lam : float
        Penalty weight.
    omega : ndarray of shape (n_features, n_features), optional
        Penalty matrix. Defaults to zero.
    rho, eps_abs, eps_rel, max_iters
        ADMM step size and stopping rule.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, tau=0.5, lam=0.0, omega=None, rho=1.2, eps_abs=1e-4, eps_rel=1e-2, max_iters=5000):
        self.tau = tau
        self.lam = lam
        self.omega = omega
        self.rho = rho
        self.eps_abs = eps_abs
        self.eps_rel = eps_rel
        self.max_iters = max_iters

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        K = X.shape[1]
        omega = np.zeros((K, K)) if self.omega is None else np.asarray(self.omega, dtype=float)
        if omega.shape != (K, K):
            raise InvalidInputError(f"omega must be {K}x{K}")
        opts = AdmmOptions(self.rho, self.eps_abs, self.eps_rel, self.max_iters)
        res = solve_pqr(X, y, self.tau, self.lam, omega, opts)
        self.coef_ = res.b
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        self.n_features_in_ = K
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_


class DirectionalQuantileRegressor(BaseEstimator):
    """Directional quantile varying-coefficient model for bivariate functional responses.

    Fits ``Q(tau, s | x, t) = x' C(s) H(t)`` on ``d`` evenly spaced directions,
    first per direction and then by propagation-separation smoothing across
    nearby directions.

    Parameters
    ----------
    tau : float
    d : int
        Number of directions.
    degree, knot_count, knot_range
        B-spline basis in ``t``; ``knot_range=None`` spreads the knots
        evenly over [0, 1].
    h, C, c0, alpha, lambda_grid, cv_folds, lam, cn, cn_basis
        See ``PsOptions``.
    rho, eps_abs, eps_rel, max_iters
        See ``AdmmOptions``.

    Attributes
    ----------
    basis_ : SplineBasis
    grid_ : DirectionGrid
    initial_field_ : CoefficientField
        Per-direction estimates.
    field_ : CoefficientField
        Smoothed estimates.
    trace_ : list of StageRecord
    lambda_ : float
    """

    def __init__(
        self,
        tau=0.05,
        d=100,
        degree=3,
        knot_count=14,
        knot_range=None,
        h=1.15,
        C=5,
        c0=1,
        alpha=1.0,
        lambda_grid=DEFAULT_LAMBDA_GRID,
        cv_folds=5,
        lam=None,
        cn=None,
        cn_basis="observations",
        rho=1.2,
        eps_abs=1e-4,
        eps_rel=1e-2,
        max_iters=5000,
    ):
        self.tau = tau
        self.d = d
        self.degree = degree
        self.knot_count = knot_count
        self.knot_range = knot_range
        self.h = h
        self.C = C
        self.c0 = c0
        self.alpha = alpha
        self.lambda_grid = lambda_grid
        self.cv_folds = cv_folds
        self.lam = lam
        self.cn = cn
        self.cn_basis = cn_basis
        self.rho = rho
        self.eps_abs = eps_abs
        self.eps_rel = eps_rel
        self.max_iters = max_iters

    def _options(self):
        ps = PsOptions(
            h=self.h, C=self.C, c0=self.c0, alpha=self.alpha, lambda_grid=self.lambda_grid,
            cv_folds=self.cv_folds, lam=self.lam, cn=self.cn, cn_basis=self.cn_basis,
        )
        return ps, AdmmOptions(self.rho, self.eps_abs, self.eps_rel, self.max_iters)

    def fit(self, X, Y, t=None):
        """Fit on covariates ``X`` (n, p) and responses ``Y`` (n, J, 2) observed at ``t`` (J,).

        ``t`` defaults to ``J`` equally spaced points on [0, 1].
        """
        X = check_array(X)
        Y = check_array(Y, allow_nd=True)
        if Y.ndim != 3 or Y.shape[0] != X.shape[0] or Y.shape[2] != 2:
            raise InvalidInputError("Y must have shape (n_samples, J, 2) matching X")
        t = np.linspace(0.0, 1.0, Y.shape[1]) if t is None else np.asarray(t, dtype=float)
        return self.fit_dataset(FunctionalDataset(t, Y, X))

    def fit_dataset(self, data: FunctionalDataset):
        ps, admm = self._options()
        self.basis_ = build_basis(self.degree, evenly_spaced_knots(self.knot_count, *(self.knot_range or ())))
        self.grid_ = DirectionGrid(self.d)
        self.initial_field_, self.field_, self.trace_ = run_multistage(
            data, self.basis_, self.grid_, self.tau, ps, admm
        )
        self.lambda_ = self.initial_field_.lam
        self.n_features_in_ = data.p
        return self

    def predict_quantiles(self, x, t, initial=False):
        """Directional quantiles ``q_r`` at one covariate vector and location."""
        check_is_fitted(self, "field_")
        fld = self.initial_field_ if initial else self.field_
        return directional_quantiles(fld, self.basis_, x, t)

    def predict(self, X, t):
        """Directional quantiles for each row of ``X`` at location ``t``; shape (n, d)."""
        X = check_array(X)
        return np.stack([self.predict_quantiles(x, t) for x in X])

    def envelope(self, x, t, initial=False):
        q = self.predict_quantiles(x, t, initial)
        return build_envelope(self.grid_, q, tau=self.tau, t=float(t), x=list(np.ravel(x)))
