"""Dense kernels shared by the estimators.

Cholesky solves, symmetric eigendecomposition, standard normal quantiles and
reproducible Gaussian sampling with explicit stream splitting.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import ndtri

from .exceptions import NoConvergence, NotPositiveDefinite, OutOfDomain

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class RngStream:
    """Value-semantic handle on a reproducible random stream.

    The pair ``(seed, stream)`` fully determines the sample sequence.  Parallel
    callers derive independent children with :meth:`child` instead of sharing
    a generator.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            value = getattr(self, name)
            if not 0 <= int(value) < 2**64:
                raise OutOfDomain(f"{name} must be a 64-bit unsigned integer, got {value}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "RngStream":
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), int(index)))
        return RngStream(self.seed, int(ss.generate_state(1, dtype=np.uint64)[0]))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, an int seed or None."""
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return RngStream(0).generator()
    return RngStream(int(rng)).generator()


@dataclass(frozen=True)
class SpdFactorization:
    dimension: int
    factor: np.ndarray  # lower triangular

    def solve(self, B):
        return scipy.linalg.cho_solve((self.factor, True), B, check_finite=False)


@dataclass(frozen=True)
class SymEig:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray


def _check_symmetric(A, what="matrix"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise OutOfDomain(f"{what} must be square, got shape {A.shape}")
    scale = max(np.abs(A).max(initial=0.0), 1.0)
    if np.abs(A - A.T).max(initial=0.0) > 1e-10 * scale:
        raise OutOfDomain(f"{what} is not symmetric")
    return A


def spd_factor(A) -> SpdFactorization:
    """Cholesky factorization with an explicit pivot threshold.

    Raises NotPositiveDefinite when a squared pivot falls below
    ``n * eps * max(diag(A))``; no jitter is ever added.
    """
    A = _check_symmetric(A)
    n = A.shape[0]
    if n < 1:
        raise OutOfDomain("empty matrix")
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("Cholesky factorization failed") from exc
    threshold = n * _EPS * np.max(np.diag(A))
    pivots = np.diag(L) ** 2
    if not np.all(np.isfinite(pivots)) or pivots.min() <= threshold:
        raise NotPositiveDefinite(
            f"pivot {pivots.min():.3e} below threshold {threshold:.3e}"
        )
    return SpdFactorization(n, L)


def spd_solve(A, B):
    """Solve ``A X = B`` for symmetric positive-definite ``A``."""
    return spd_factor(A).solve(np.asarray(B, dtype=float))


def sym_eig(A, max_sweeps=100) -> SymEig:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending."""
    A = _check_symmetric(A)
    try:
        w, V = scipy.linalg.eigh(A, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NoConvergence(f"symmetric eigensolver failed: {exc}") from exc
    order = np.argsort(w)[::-1]
    return SymEig(w[order], V[:, order])


def std_normal_quantile(q):
    """Inverse standard normal CDF."""
    q_arr = np.asarray(q, dtype=float)
    if not np.all((q_arr > 0) & (q_arr < 1)):
        raise OutOfDomain(f"quantile level must lie in (0, 1), got {q}")
    z = ndtri(q_arr)
    return float(z) if np.ndim(z) == 0 else z


def sample_gaussian_matrix(rows, cols, rng):
    if rows < 1 or cols < 1:
        raise OutOfDomain("rows and cols must be positive")
    return as_generator(rng).standard_normal((rows, cols))
