"""Scikit-learn compatible front end."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .approx_inverse import Method, build_inverse, omega_diagonal
from .inference import (
    bias_diagnostic,
    confidence_intervals,
    debias,
    partial_out,
    significant_set,
)
from .lasso import cv_lasso, lasso_fit, noise_level
from .linalg import RngStream


class DebiasedRegression(RegressorMixin, BaseEstimator):
    """Bias-corrected linear regression with closed-form standard errors for p > n.

    The lasso supplies an initial estimate, a diagonally scaled approximate
    inverse ``M`` of ``X`` corrects its bias, and ``Omega = n M M'`` gives the
    covariance of the corrected estimate.

    Parameters
    ----------
    method : {"mpi", "rls", "rid"}, default="mpi"
        Moore-Penrose, random least squares or ridge approximate inverse.
    k : int, optional
        Projection dimension for ``rls``; defaults to ``floor(0.9 n)``.
    n_draws : int, default=1000
        Number of sketches averaged by the ``rls`` ensemble.
    gamma : float, default=1.0
        Ridge penalty for ``rid``.
    rls_solver : {"ensemble", "spectral"}, default="ensemble"
    v_samples : int, default=10000
        Monte Carlo draws for the spectral ``rls`` shrinkage factors.
    alpha : float, default=0.05
        Confidence intervals have level ``1 - alpha``.
    lasso_lambda : float, optional
        Fixed lasso penalty; cross-validated when omitted.
    cv : int, default=10
    n_lambdas : int, default=100
    random_state : int, default=0

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Bias-corrected coefficients.
    stderr_ : ndarray of shape (n_features,)
    conf_int_ : ndarray of shape (n_features, 2)
    omega_diag_ : ndarray of shape (n_features,)
    sigma2_ : float
        Lasso-based noise variance.
    init_coef_ : ndarray of shape (n_features,)
    lambda_ : float
    n_effective_ : int
        Sample size after partialling out controls.
    inverse_ : ApproximateInverse
    fit_ : DebiasedFit
    """

    def __init__(self, method="mpi", k=None, n_draws=1000, gamma=1.0,
                 rls_solver="ensemble", v_samples=10_000, alpha=0.05,
                 lasso_lambda=None, cv=10, n_lambdas=100, random_state=0):
        self.method = method
        self.k = k
        self.n_draws = n_draws
        self.gamma = gamma
        self.rls_solver = rls_solver
        self.v_samples = v_samples
        self.alpha = alpha
        self.lasso_lambda = lasso_lambda
        self.cv = cv
        self.n_lambdas = n_lambdas
        self.random_state = random_state

    def fit(self, X, y, controls=None):
        """Fit on ``(X, y)``; ``controls`` are partialled out first if given."""
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        if controls is not None:
            controls = check_array(controls, dtype=np.float64, ensure_2d=False)
            X, y, _ = partial_out(controls, X, y, reduce=True)
        n = X.shape[0]
        rng = RngStream(int(self.random_state))

        if self.lasso_lambda is None:
            self.lambda_, init = cv_lasso(X, y, self.cv, self.n_lambdas, rng.child(0))
        else:
            self.lambda_ = float(self.lasso_lambda)
            init = lasso_fit(X, y, self.lambda_)
        self.init_coef_ = init.beta
        self.sigma2_ = noise_level(init, n)

        self.inverse_ = build_inverse(
            X, self.method, k=self.k, ensemble_size=self.n_draws, gamma=self.gamma,
            rng=rng.child(1), rls_solver=self.rls_solver, v_samples=self.v_samples,
        )
        beta_c = debias(self.inverse_, X, y, init.beta)
        omega = omega_diagonal(self.inverse_).values
        self.fit_ = confidence_intervals(beta_c, omega, self.sigma2_, n, self.alpha,
                                         Method(self.method))
        self.coef_ = beta_c
        self.omega_diag_ = omega
        self.stderr_ = self.fit_.se
        self.conf_int_ = np.column_stack([self.fit_.ci_lower, self.fit_.ci_upper])
        self.n_effective_ = n
        self._X_fit = X
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        return X @ self.coef_

    def significant_features(self):
        check_is_fitted(self, "coef_")
        return significant_set(self.fit_)

    def bias_diagnostic(self, beta_true=None):
        check_is_fitted(self, "coef_")
        return bias_diagnostic(self.inverse_, self._X_fit, self.init_coef_, beta_true)
