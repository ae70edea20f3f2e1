"""Diagonally scaled approximate inverses of a wide design matrix.

Every constructor returns ``M = D @ M_tilde`` where ``M_tilde`` is a p x n
approximate inverse of ``X`` and ``D = diag(d)`` is chosen so that
``diag(M @ X) == 1``.  Three base maps are available:

* ``mpi``: the Moore-Penrose pseudoinverse ``X'(XX')^{-1}``,
* ``rls``: the ensemble average of random least squares maps
  ``R (R'X'XR)^{-1} R'X'`` over Gaussian sketches ``R`` (p x k),
* ``rid``: the ridge map ``(X'X + gamma I)^{-1} X'`` evaluated in dual form.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .exceptions import (
    DegenerateColumn,
    InvalidConstant,
    NonPositiveGamma,
    NotPositiveDefinite,
    OutOfDomain,
    SingularGram,
    SingularSketch,
)
from .linalg import RngStream, as_generator, spd_factor, sym_eig


class Method(str, Enum):
    MPI = "mpi"
    RLS = "rls"
    RID = "rid"


@dataclass(frozen=True)
class Tuning:
    k: int | None = None
    ensemble_size: int | None = None
    gamma: float | None = None
    v_samples: int | None = None
    rejections: int = 0


@dataclass(frozen=True)
class ApproximateInverse:
    """Scaled approximate inverse ``M = diag(d) @ M_tilde``.

    Attributes
    ----------
    M : ndarray of shape (p, n)
    d : ndarray of shape (p,)
        Diagonal scaling; ``d[j] = 1 / (M_tilde[j] @ X[:, j])``.
    method : Method
    tuning : Tuning
    M_tilde : ndarray of shape (p, n)
        The unscaled map, kept for shared-scaling variance comparisons.
    """

    M: np.ndarray
    d: np.ndarray
    method: Method
    tuning: Tuning = field(default_factory=Tuning)
    M_tilde: np.ndarray | None = None

    @property
    def n_samples(self):
        return self.M.shape[1]

    @property
    def n_features(self):
        return self.M.shape[0]


@dataclass(frozen=True)
class OmegaDiagonal:
    values: np.ndarray
    method: Method


def _check_design(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise OutOfDomain(f"X must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise OutOfDomain("X contains non-finite values")
    return X


def _gram_factor(X):
    try:
        return spd_factor(X @ X.T)
    except NotPositiveDefinite as exc:
        raise SingularGram(
            "XX' is not positive definite (duplicated or collinear rows?)"
        ) from exc


def _scaled(M_tilde, X, method, tuning):
    diag = np.einsum("ji,ij->j", M_tilde, X)
    bad = ~np.isfinite(diag) | (np.abs(diag) <= 1e-12)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise DegenerateColumn(
            f"column {j} has m_j'x_j = {diag[j]:.3e}; is it (nearly) zero?"
        )
    d = 1.0 / diag
    return ApproximateInverse(d[:, None] * M_tilde, d, method, tuning, M_tilde)


def mpi_inverse(X) -> ApproximateInverse:
    """Diagonally scaled Moore-Penrose inverse ``D X'(XX')^{-1}``."""
    X = _check_design(X)
    n, p = X.shape
    if n > p:
        raise OutOfDomain(f"expected n <= p, got n={n}, p={p}")
    W = _gram_factor(X).solve(X)  # (XX')^{-1} X, n x p
    return _scaled(W.T, X, Method.MPI, Tuning())


def ridge_inverse(X, gamma) -> ApproximateInverse:
    """Diagonally scaled ridge map via ``X'(XX' + gamma I_n)^{-1}``."""
    X = _check_design(X)
    if not gamma > 0:
        raise NonPositiveGamma(f"ridge penalty must be positive, got {gamma}")
    n = X.shape[0]
    G = X @ X.T
    G[np.diag_indices(n)] += gamma
    try:
        W = spd_factor(G).solve(X)
    except NotPositiveDefinite as exc:
        raise SingularGram("XX' + gamma I is not positive definite") from exc
    return _scaled(W.T, X, Method.RID, Tuning(gamma=float(gamma)))


class _PairwiseSum:
    """Binary-counter pairwise accumulator.

    Terms are merged in a fixed tree order so the result depends only on the
    sequence of terms, never on how they were scheduled.
    """

    def __init__(self):
        self._stack = []  # (level, partial sum)

    def add(self, term):
        level, acc = 0, term
        while self._stack and self._stack[-1][0] == level:
            _, prev = self._stack.pop()
            acc = prev + acc
            level += 1
        self._stack.append((level, acc))

    def total(self):
        if not self._stack:
            raise ValueError("no terms accumulated")
        acc = self._stack[-1][1]
        for _, partial in reversed(self._stack[:-1]):
            acc = partial + acc
        return acc


def _sketch_draw(X, k, gen):
    R = gen.standard_normal((X.shape[1], k))
    XR = X @ R
    factor = spd_factor(XR.T @ XR)
    return R, XR, factor


def rls_inverse_ensemble(X, k, ensemble_size=1000, rng=None, rowspace=True) -> ApproximateInverse:
    """Random least squares inverse averaged over Gaussian sketches.

    Each draw uses its own child stream ``rng.child(r)``.  A draw whose
    sketched Gram ``R'X'XR`` fails Cholesky is redrawn from the same child
    stream; more than ``10 * ensemble_size`` rejections abort.

    With ``rowspace=True`` (default) the sketch is replaced by its projection
    onto the row space of ``X`` before forming the term, i.e. each term is
    ``X'(XX')^{-1} H_R`` with ``H_R`` the projector onto ``col(XR)``.  This is
    the conditional mean of the literal term given that projection, so the
    ensemble has the same expectation with lower variance, and at ``k = n``
    every term is exactly the Moore-Penrose map.  ``rowspace=False`` averages
    the literal terms ``R (R'X'XR)^{-1} R'X'``.
    """
    X = _check_design(X)
    n, p = X.shape
    k = int(k)
    if not 1 <= k <= n:
        raise InvalidConstant(f"projection dimension must satisfy 1 <= k <= n, got k={k}, n={n}")
    if ensemble_size < 1:
        raise InvalidConstant("ensemble_size must be >= 1")
    if not isinstance(rng, RngStream):
        rng = RngStream(0 if rng is None else int(rng))

    pinv_factor = _gram_factor(X) if rowspace else None
    acc = _PairwiseSum()
    rejections = 0
    for r in range(ensemble_size):
        gen = rng.child(r).generator()
        while True:
            try:
                R, XR, factor = _sketch_draw(X, k, gen)
                break
            except NotPositiveDefinite:
                rejections += 1
                if rejections > 10 * ensemble_size:
                    raise SingularSketch(
                        f"{rejections} sketches rejected; is rank(X) < k?"
                    ) from None
        if rowspace:
            acc.add(XR @ factor.solve(XR.T))  # n x n projector H_R
        else:
            acc.add(R @ factor.solve(XR.T))  # p x n
    mean = acc.total() / ensemble_size
    if rowspace:
        M_tilde = pinv_factor.solve(X).T @ mean
    else:
        M_tilde = mean
    tuning = Tuning(k=k, ensemble_size=int(ensemble_size), rejections=rejections)
    return _scaled(M_tilde, X, Method.RLS, tuning)


def spectral_shrinkage(eigenvalues, k, v_samples, rng):
    """Estimate the diagonal of ``V = E[Xi (Xi' L^{-1} Xi)^{-1} Xi'] L^{-1}``.

    ``L = diag(eigenvalues)`` and ``Xi`` is n x (n-k) standard normal.  Only
    the diagonal is estimated; the off-diagonal entries vanish in expectation.
    Returns ``(mean, standard_error)`` of the per-eigenvalue estimates.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    n = lam.size
    m = n - int(k)
    if m <= 0:
        return np.zeros(n), np.zeros(n)
    gen = as_generator(rng)
    inv = 1.0 / lam
    total = np.zeros(n)
    total_sq = np.zeros(n)
    # batched draws keep memory bounded for large v_samples
    batch = max(1, min(int(v_samples), 2_000_000 // max(n * m, 1)))
    done = 0
    while done < v_samples:
        b = min(batch, v_samples - done)
        Xi = gen.standard_normal((b, n, m))
        A = np.einsum("bim,i,bil->bml", Xi, inv, Xi)  # Xi' L^{-1} Xi
        sol = np.linalg.solve(A, np.swapaxes(Xi, 1, 2))  # (Xi'L^{-1}Xi)^{-1} Xi'
        diag = np.einsum("bim,bmi->bi", Xi, sol) * inv
        total += diag.sum(axis=0)
        total_sq += (diag**2).sum(axis=0)
        done += b
    mean = total / v_samples
    var = np.maximum(total_sq / v_samples - mean**2, 0.0)
    return mean, np.sqrt(var / v_samples)


class _Spectrum:
    """Thin spectral factors of a wide design: ``X = Vh diag(sqrt(lam)) U'``."""

    def __init__(self, X):
        eig = sym_eig(X @ X.T)
        lam = eig.eigenvalues
        if lam[-1] <= 1e-10 * lam[0]:
            raise SingularGram(
                f"XX' has eigenvalue {lam[-1]:.3e} below 1e-10 * lambda_max"
            )
        self.lam = lam
        self.Vh = eig.eigenvectors
        self.U = X.T @ self.Vh / np.sqrt(lam)  # p x n, orthonormal columns

    def shrunk_map(self, keep):
        """``U diag(keep) L^{-1/2} Vh'`` with ``keep = 1 - V``."""
        return (self.U * (keep / np.sqrt(self.lam))) @ self.Vh.T


def rls_inverse_spectral(X, k, v_samples=10_000, rng=None) -> ApproximateInverse:
    """Random least squares inverse evaluated through its spectral form.

    Uses ``E[R(R'X'XR)^{-1}R'] X'X = U (I - V) U'`` so that only the n diagonal
    shrinkage factors ``V_ii`` need Monte Carlo estimation; ``k = n`` gives
    ``V = 0`` and reproduces the Moore-Penrose map exactly.
    """
    X = _check_design(X)
    n, _ = X.shape
    k = int(k)
    if not 1 <= k <= n:
        raise InvalidConstant(f"projection dimension must satisfy 1 <= k <= n, got k={k}, n={n}")
    spectral = _Spectrum(X)
    V, _ = spectral_shrinkage(spectral.lam, k, v_samples, rng)
    M_tilde = spectral.shrunk_map(1.0 - V)
    return _scaled(M_tilde, X, Method.RLS, Tuning(k=k, v_samples=int(v_samples)))


def recommended_k(n, p, c_k):
    """Projection dimension ``floor((1 - c_k sqrt(log p / n)) (n - 1))``, clamped to [1, n-1].

    The floor tolerates 1e-9 of rounding so that products landing on an
    integer, and the ``c_k -> 0`` limit, give the integer itself.
    """
    if n <= 1 or p <= 1 or not c_k > 0:
        raise InvalidConstant("need n > 1, p > 1 and c_k > 0")
    shrink = c_k * np.sqrt(np.log(p) / n)
    if shrink >= 1:
        raise InvalidConstant(
            f"c_k * sqrt(log p / n) = {shrink:.3f} >= 1 leaves no positive projection dimension"
        )
    k = int(np.floor((1.0 - shrink) * (n - 1) + 1e-9))
    return min(max(k, 1), n - 1)


def recommended_gamma(n, p, c_gamma):
    """Ridge penalty ``c_gamma * p * sqrt(log p / n)``."""
    if not c_gamma > 0:
        raise InvalidConstant("c_gamma must be positive")
    return float(c_gamma * p * np.sqrt(np.log(p) / n))


def omega_diagonal(inverse: ApproximateInverse) -> OmegaDiagonal:
    """Diagonal of ``Omega = n M M'``."""
    M = inverse.M
    return OmegaDiagonal(M.shape[1] * np.einsum("ji,ji->j", M, M), inverse.method)


def build_inverse(X, method, *, k=None, ensemble_size=1000, gamma=1.0,
                  rng=None, rls_solver="ensemble", v_samples=10_000):
    """Dispatch on ``method`` with the defaults used throughout the package.

    ``k`` defaults to ``floor(0.9 n)``.
    """
    method = Method(method)
    if method is Method.MPI:
        return mpi_inverse(X)
    if method is Method.RID:
        return ridge_inverse(X, gamma)
    n = np.shape(X)[0]
    if k is None:
        k = int(np.floor(0.9 * n))
    if rls_solver == "ensemble":
        return rls_inverse_ensemble(X, k, ensemble_size, rng)
    if rls_solver == "spectral":
        return rls_inverse_spectral(X, k, v_samples, rng)
    raise InvalidConstant(f"unknown rls_solver {rls_solver!r}")
