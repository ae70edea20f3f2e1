"""Lasso initial estimator and the lasso-based noise level.

The objective is ``(1/n) ||y - X b||^2 + lam ||b||_1``.  Under this scaling the
coordinate update soft-thresholds at ``lam / 2``, and the penalty that zeroes
every coefficient is ``lam_max = max_j |(2/n) x_j' y|``.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .exceptions import (
    DegreesOfFreedomExhausted,
    InvalidConstant,
    NoConvergence,
    OutOfDomain,
    ZeroColumn,
)
from .linalg import as_generator

MAX_SWEEPS = 100_000


@dataclass(frozen=True)
class LassoFit:
    beta: np.ndarray
    lam: float
    support_size: int
    residuals: np.ndarray
    objective: float
    n_sweeps: int = 0

    @property
    def support(self):
        return np.flatnonzero(self.beta)


@njit(cache=True)
def _kkt_ok(X, r, beta, lam, rtol):
    n, p = X.shape
    for j in range(p):
        g = 0.0
        for i in range(n):
            g += X[i, j] * r[i]
        g *= -2.0 / n
        if beta[j] != 0.0:
            s = 1.0 if beta[j] > 0 else -1.0
            if abs(g + lam * s) > rtol * lam:
                return False
        elif abs(g) > lam * (1.0 + rtol):
            return False
    return True


@njit(cache=True)
def _sweep(X, col_sq, r, beta, lam, active_only, active):
    """One cyclic pass; returns the largest absolute coefficient change."""
    n, p = X.shape
    half = 0.5 * lam
    max_delta = 0.0
    for j in range(p):
        if active_only and not active[j]:
            continue
        old = beta[j]
        rho = 0.0
        for i in range(n):
            rho += X[i, j] * r[i]
        rho = rho / n + col_sq[j] * old
        if rho > half:
            new = (rho - half) / col_sq[j]
        elif rho < -half:
            new = (rho + half) / col_sq[j]
        else:
            new = 0.0
        delta = new - old
        if delta != 0.0:
            for i in range(n):
                r[i] -= X[i, j] * delta
            beta[j] = new
            if abs(delta) > max_delta:
                max_delta = abs(delta)
    return max_delta


@njit(cache=True)
def _cd(X, col_sq, r, beta, lam, tol, kkt_rtol, max_sweeps):
    """Active-set cyclic coordinate descent; updates ``r`` and ``beta`` in place.

    Returns the number of sweeps, or -1 without convergence.
    """
    p = X.shape[1]
    active = np.zeros(p, dtype=np.bool_)
    sweeps = 0
    while sweeps < max_sweeps:
        delta = _sweep(X, col_sq, r, beta, lam, False, active)
        sweeps += 1
        for j in range(p):
            active[j] = beta[j] != 0.0
        bmax = 0.0
        for j in range(p):
            bmax = max(bmax, abs(beta[j]))
        if delta <= tol * (1.0 + bmax) and _kkt_ok(X, r, beta, lam, kkt_rtol):
            return sweeps
        while sweeps < max_sweeps:
            delta = _sweep(X, col_sq, r, beta, lam, True, active)
            sweeps += 1
            bmax = 0.0
            for j in range(p):
                bmax = max(bmax, abs(beta[j]))
            if delta <= tol * (1.0 + bmax):
                break
    return -1


@njit(cache=True)
def _cd_path(X, y, lambdas, tol, kkt_rtol, max_sweeps):
    n, p = X.shape
    col_sq = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        col_sq[j] = s / n
    beta = np.zeros(p)
    r = y.copy()
    out = np.zeros((lambdas.size, p))
    for l in range(lambdas.size):
        if _cd(X, col_sq, r, beta, lambdas[l], tol, kkt_rtol, max_sweeps) < 0:
            out[l:, :] = np.nan
            return out
        out[l] = beta
    return out


def _prepare(X, y):
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float).ravel()
    if X.ndim != 2 or y.shape[0] != X.shape[0]:
        raise OutOfDomain(f"shape mismatch: X {X.shape}, y {y.shape}")
    zero = np.flatnonzero(~np.any(X != 0.0, axis=0))
    if zero.size:
        raise ZeroColumn(f"column {int(zero[0])} of X is identically zero")
    return X, y


def objective(X, y, beta, lam):
    r = y - X @ beta
    return float(r @ r / X.shape[0] + lam * np.abs(beta).sum())


def lambda_max(X, y):
    """Smallest penalty at which the lasso solution is exactly zero."""
    X = np.asarray(X, dtype=float)
    return float(np.max(np.abs(2.0 / X.shape[0] * (X.T @ y))))


def _make_fit(X, y, beta, lam, sweeps=0):
    beta = np.array(beta, dtype=float)
    r = y - X @ beta
    return LassoFit(
        beta=beta,
        lam=float(lam),
        support_size=int(np.count_nonzero(beta)),
        residuals=r,
        objective=float(r @ r / X.shape[0] + lam * np.abs(beta).sum()),
        n_sweeps=sweeps,
    )


def lasso_fit(X, y, lam, *, tol=1e-8, max_sweeps=MAX_SWEEPS, beta0=None) -> LassoFit:
    """Cyclic coordinate descent for a single penalty.

    Stops when a full sweep moves no coefficient by more than
    ``tol * (1 + max|beta|)`` and the KKT conditions hold to ``1e-7 * lam``.
    """
    if not lam > 0:
        raise InvalidConstant(f"lambda must be positive, got {lam}")
    X, y = _prepare(X, y)
    n, p = X.shape
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    col_sq = (X**2).sum(axis=0) / n
    r = y - X @ beta
    sweeps = _cd(X, col_sq, r, beta, float(lam), tol, 1e-7, int(max_sweeps))
    if sweeps < 0:
        raise NoConvergence(f"coordinate descent did not converge in {max_sweeps} sweeps")
    return _make_fit(X, y, beta, lam, sweeps)


def lasso_path(X, y, lambdas, *, tol=1e-8, max_sweeps=MAX_SWEEPS):
    """Warm-started solutions for a decreasing penalty sequence, shape (L, p)."""
    X, y = _prepare(X, y)
    lambdas = np.asarray(lambdas, dtype=float)
    coefs = _cd_path(X, y, lambdas, tol, 1e-7, int(max_sweeps))
    if np.isnan(coefs).any():
        bad = int(np.flatnonzero(np.isnan(coefs[:, 0]))[0])
        raise NoConvergence(f"no convergence at lambda={lambdas[bad]:.4g}")
    return coefs


def homotopy_path(X, y, lambdas):
    """Exact lasso solutions at ``lambdas`` by tracking the piecewise-linear path.

    Between kinks the active coefficients satisfy
    ``b_A(lam) = G_A^{-1} X_A'y - (n lam / 2) G_A^{-1} s_A``; the active system is
    re-solved from scratch at every kink so no error accumulates along the path.
    Returns an array of shape (len(lambdas), p).
    """
    X, y = _prepare(X, y)
    n, p = X.shape
    lambdas = np.asarray(lambdas, dtype=float)
    out = np.zeros((lambdas.size, p))
    order = np.argsort(-lambdas)
    targets = lambdas[order]

    xty = X.T @ y
    lam = 2.0 / n * np.abs(xty).max()
    j0 = int(np.argmax(np.abs(xty)))
    active = [j0]
    signs = {j0: np.sign(xty[j0])}
    t = 0
    while t < targets.size and targets[t] >= lam:
        t += 1  # zero solution at or above lam_max
    last_added, last_dropped = j0, None
    for _ in range(50 * (n + p)):
        if t >= targets.size:
            break
        XA = X[:, active]
        G = XA.T @ XA
        s = np.array([signs[j] for j in active])
        try:
            sol = np.linalg.solve(G, np.column_stack([xty[active], s]))
        except np.linalg.LinAlgError as exc:
            raise NoConvergence("singular active set on the lasso path") from exc
        a, d = sol[:, 0], sol[:, 1]

        # next kink below the current penalty
        floor = lam * (1.0 - 1e-12)
        best, event, who = 0.0, None, None
        with np.errstate(divide="ignore", invalid="ignore"):
            drop = 2.0 * a / (n * d)
        for idx, j in enumerate(active):
            if j != last_added and 0.0 < drop[idx] < floor and drop[idx] > best:
                best, event, who = drop[idx], "drop", idx
        inactive = np.setdiff1d(np.arange(p), active, assume_unique=False)
        if inactive.size:
            XI = X[:, inactive]
            u = 2.0 / n * (XI.T @ (y - XA @ a))
            v = XI.T @ (XA @ d)
            with np.errstate(divide="ignore", invalid="ignore"):
                cand = np.stack([u / (1.0 - v), -u / (1.0 + v)])
            cand[~np.isfinite(cand) | (cand <= 0.0) | (cand >= floor)] = 0.0
            if last_dropped is not None:
                cand[:, inactive == last_dropped] = 0.0
            pos = np.unravel_index(np.argmax(cand), cand.shape)
            if cand[pos] > best:
                best, event, who = cand[pos], "add", (int(inactive[pos[1]]), pos[0])

        while t < targets.size and targets[t] >= best:
            out[order[t], active] = a - 0.5 * n * targets[t] * d
            t += 1
        if event is None:
            break
        lam = best
        if event == "drop":
            j = active.pop(who)
            del signs[j]
            last_dropped, last_added = j, None
        else:
            j, branch = who
            active.append(j)
            signs[j] = 1.0 if branch == 0 else -1.0
            last_added, last_dropped = j, None
    else:
        raise NoConvergence("lasso homotopy exceeded its step budget")
    return out


def lambda_grid(X, y, grid_size=100, ratio=1e-3):
    lmax = lambda_max(X, y)
    if grid_size == 1:
        return np.array([lmax])
    return np.geomspace(lmax, ratio * lmax, int(grid_size))


def cv_lasso(X, y, folds=10, grid_size=100, rng=None, *, lambdas=None, solver="homotopy"):
    """Select the penalty by K-fold cross-validated mean squared error.

    Rows are shuffled once with ``rng`` and split into contiguous folds.  Ties
    in mean held-out error go to the smallest penalty.  Fold paths come from
    the exact homotopy (``solver="homotopy"``) or warm-started coordinate
    descent (``solver="cd"``); the full-data refit is always finished by
    coordinate descent so its KKT conditions are checked.

    Returns
    -------
    lam_star : float
    fit : LassoFit
        Refit on the full data at ``lam_star``.
    """
    X, y = _prepare(X, y)
    n = X.shape[0]
    if folds < 2 or n < folds:
        raise InvalidConstant(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    if lambdas is None:
        lambdas = lambda_grid(X, y, grid_size)
    lambdas = np.sort(np.asarray(lambdas, dtype=float))[::-1]

    if solver == "homotopy":
        path = homotopy_path
    elif solver == "cd":
        path = lasso_path
    else:
        raise InvalidConstant(f"unknown lasso solver {solver!r}")

    perm = as_generator(rng).permutation(n)
    bounds = np.linspace(0, n, folds + 1).round().astype(int)
    mse = np.zeros(lambdas.size)
    for f in range(folds):
        test = perm[bounds[f]:bounds[f + 1]]
        train = np.setdiff1d(perm, test, assume_unique=True)
        train.sort()
        coefs = path(X[train], y[train], lambdas)
        resid = y[test][None, :] - coefs @ X[test].T
        mse += (resid**2).mean(axis=1)
    mse /= folds
    best = np.flatnonzero(mse == mse.min()).max()  # ascending-lambda tie break
    lam_star = float(lambdas[best])
    start = path(X, y, lambdas[: best + 1])[-1]
    if lam_star >= lambda_max(X, y):
        return lam_star, _make_fit(X, y, start, lam_star)
    return lam_star, lasso_fit(X, y, lam_star, beta0=start)


def noise_level(fit: LassoFit, n=None):
    """Residual variance corrected by the selected model size, ``e'e / (n - s_hat)``."""
    n = fit.residuals.shape[0] if n is None else int(n)
    dof = n - fit.support_size
    if dof < 1:
        raise DegreesOfFreedomExhausted(
            f"lasso retained {fit.support_size} coefficients with n={n}"
        )
    r = fit.residuals
    return float(r @ r / dof)


def theoretical_lambda(sigma, n, p, c=8.0):
    """Penalty ``c * sigma * sqrt(log p / n)`` with the conventional ``c = 8``."""
    return float(c * sigma * np.sqrt(np.log(p) / n))
