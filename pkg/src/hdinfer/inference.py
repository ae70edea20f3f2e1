"""Bias-corrected estimates, confidence intervals and diagnostics."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .approx_inverse import ApproximateInverse, Method
from .exceptions import DimensionMismatch, InvalidAlpha, OutOfDomain, RankDeficientControls
from .linalg import std_normal_quantile


@dataclass(frozen=True)
class DebiasedFit:
    beta_c: np.ndarray
    omega_jj: np.ndarray
    sigma2: float
    alpha: float
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    n: int
    method: Method | None = None

    @property
    def se(self):
        return np.sqrt(self.sigma2 * self.omega_jj / self.n)

    @property
    def z(self):
        return std_normal_quantile(1.0 - self.alpha / 2.0)


@dataclass(frozen=True)
class BiasDiagnostic:
    max_offdiag: float
    l1_init_error: float | None = None
    bound_product: float | None = None


def _matrix(Minv):
    if isinstance(Minv, ApproximateInverse):
        return Minv.M, Minv.method
    return np.asarray(Minv, dtype=float), None


def debias(Minv, X, y, beta_init):
    """Corrected estimate ``M y - (M X - I) beta_init``.

    ``(M X - I) beta_init`` is evaluated as ``M (X beta_init) - beta_init`` so
    the p x p product is never formed.
    """
    M, _ = _matrix(Minv)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    beta_init = np.asarray(beta_init, dtype=float).ravel()
    p, n = M.shape
    if X.shape != (n, p) or y.shape != (n,) or beta_init.shape != (p,):
        raise DimensionMismatch(
            f"M {M.shape}, X {X.shape}, y {y.shape}, beta_init {beta_init.shape}"
        )
    return M @ y - (M @ (X @ beta_init) - beta_init)


def confidence_intervals(beta_c, omega_jj, sigma2, n, alpha=0.05, method=None) -> DebiasedFit:
    """Normal intervals ``beta_c +/- z_{alpha/2} sqrt(sigma2 * omega_jj / n)``."""
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha}")
    if not sigma2 > 0:
        raise OutOfDomain(f"sigma2 must be positive, got {sigma2}")
    beta_c = np.asarray(beta_c, dtype=float)
    omega_jj = np.asarray(omega_jj, dtype=float)
    if beta_c.shape != omega_jj.shape:
        raise DimensionMismatch(f"beta_c {beta_c.shape} vs omega {omega_jj.shape}")
    half = std_normal_quantile(1.0 - alpha / 2.0) * np.sqrt(sigma2 * omega_jj / n)
    return DebiasedFit(
        beta_c=beta_c,
        omega_jj=omega_jj,
        sigma2=float(sigma2),
        alpha=float(alpha),
        ci_lower=beta_c - half,
        ci_upper=beta_c + half,
        n=int(n),
        method=method,
    )


def max_offdiag(Minv, X, block=512):
    """``max_{j != k} |(M X)_{jk}|``, streamed over column blocks of ``X``."""
    M, _ = _matrix(Minv)
    X = np.asarray(X, dtype=float)
    p = M.shape[0]
    worst = 0.0
    for start in range(0, p, block):
        stop = min(start + block, p)
        B = M @ X[:, start:stop]
        idx = np.arange(start, stop)
        B[idx, idx - start] = 0.0
        worst = max(worst, float(np.abs(B).max()))
    return worst


def bias_diagnostic(Minv, X, beta_init, beta_true=None) -> BiasDiagnostic:
    """Factors of the bias bound ``sqrt(n) ||MX - I||_max ||beta - beta_init||_1``.

    Only off-diagonal entries enter ``max_offdiag``; the diagonal of ``MX - I``
    is zero by construction of the scaling.
    """
    off = max_offdiag(Minv, X)
    if beta_true is None:
        return BiasDiagnostic(off)
    n = np.shape(X)[0]
    l1 = float(np.abs(np.asarray(beta_true) - np.asarray(beta_init)).sum())
    return BiasDiagnostic(off, l1, float(np.sqrt(n) * off * l1))


def partial_out(Z, X, y, reduce=False):
    """Residualize ``X`` and ``y`` on the columns of ``Z``.

    Returns ``(X_star, y_star, effective_n)`` with ``effective_n = n - q``.  The
    residuals have rank at most ``n - q``; with ``reduce=True`` they are
    expressed in an orthonormal basis of the complement of ``col(Z)``, giving
    ``effective_n`` rows with the same inner products, which is the form the
    approximate inverses need (their Gram matrix must be nonsingular).
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, q = Z.shape
    if X.shape[0] != n or y.shape[0] != n:
        raise DimensionMismatch(f"Z {Z.shape}, X {X.shape}, y {y.shape}")
    if q >= n:
        raise RankDeficientControls(f"{q} controls leave no degrees of freedom with n={n}")
    Q, R = scipy.linalg.qr(Z, mode="full")
    rdiag = np.abs(np.diag(R[:q, :q]))
    if q and rdiag.min() <= max(n, q) * np.finfo(float).eps * rdiag.max():
        raise RankDeficientControls("controls are not of full column rank")
    Qz, Qperp = Q[:, :q], Q[:, q:]
    if reduce:
        return Qperp.T @ X, Qperp.T @ y, n - q
    X_star = X - Qz @ (Qz.T @ X)
    y_star = y - Qz @ (Qz.T @ y)
    return X_star, y_star, n - q


def significant_set(fit: DebiasedFit):
    """Indices whose confidence interval excludes zero."""
    return np.flatnonzero((fit.ci_lower > 0) | (fit.ci_upper < 0)).tolist()
