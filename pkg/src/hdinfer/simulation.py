"""Monte Carlo harness: data generating processes, replication engine and
empirical checks of the approximate-inverse properties.

Each replication draws its own child stream of the configured seed and
results are reduced in replication order, so the report does not depend on
the number of workers.
"""

import csv
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .approx_inverse import (
    Method,
    build_inverse,
    mpi_inverse,
    omega_diagonal,
    ridge_inverse,
    rls_inverse_ensemble,
    rls_inverse_spectral,
)
from .exceptions import (
    ConfigError,
    NotPositiveDefinite,
    NumericalError,
    OutOfDomain,
    ReplicationFailure,
    TooManyNonzeros,
)
from .inference import confidence_intervals, debias, max_offdiag
from .lasso import cv_lasso, noise_level
from .linalg import RngStream, as_generator, spd_factor

log = logging.getLogger(__name__)

SIGMA_KINDS = ("equicorrelated", "toeplitz", "identity")
FAMILIES = ("gaussian", "student_t")


def make_sigma(kind, p, rho=0.0):
    """Equicorrelated (``rho`` off the diagonal), Toeplitz (``rho**|j-k|``) or identity."""
    if kind == "identity" or rho == 0:
        Sigma = np.eye(p)
    elif kind == "equicorrelated":
        Sigma = np.full((p, p), float(rho))
        np.fill_diagonal(Sigma, 1.0)
    elif kind == "toeplitz":
        idx = np.arange(p)
        Sigma = float(rho) ** np.abs(idx[:, None] - idx[None, :])
    else:
        raise ConfigError(f"unknown covariance kind {kind!r}")
    spd_factor(Sigma)  # raises NotPositiveDefinite
    return Sigma


def sample_design(n, p, Sigma, family="gaussian", rng=None, df=5.0, factor=None):
    """Rows i.i.d. ``N(0, Sigma)``, or multivariate t with ``df`` degrees of freedom."""
    gen = as_generator(rng)
    if factor is None:
        factor = spd_factor(Sigma).factor
    X = gen.standard_normal((n, p)) @ factor.T
    if family == "student_t":
        X *= np.sqrt(df / gen.chisquare(df, size=n))[:, None]
    elif family != "gaussian":
        raise ConfigError(f"unknown design family {family!r}")
    return X


def sample_errors(n, sigma2, family="gaussian", rng=None, df=5.0):
    """Errors with variance ``sigma2``; Student t draws are rescaled to that variance."""
    gen = as_generator(rng)
    if family == "gaussian":
        return math.sqrt(sigma2) * gen.standard_normal(n)
    if family == "student_t":
        if df <= 2:
            raise ConfigError("student_t errors need df > 2 for a finite variance")
        return math.sqrt(sigma2 * (df - 2) / df) * gen.standard_t(df, size=n)
    raise ConfigError(f"unknown error family {family!r}")


def make_beta(p, groups, sigma2, n, rng=None):
    """Local-to-zero coefficients ``sqrt(sigma2 / n) * b`` on random coordinates.

    ``groups`` is a sequence of ``(b, count)`` pairs.  Returns the coefficient
    vector and one index array per group.
    """
    counts = [int(c) for _, c in groups]
    total = sum(counts)
    if total > p:
        raise TooManyNonzeros(f"{total} nonzero coefficients requested with p={p}")
    chosen = as_generator(rng).choice(p, size=total, replace=False)
    beta = np.zeros(p)
    supports, start = [], 0
    for (b, _), c in zip(groups, counts):
        idx = np.sort(chosen[start:start + c])
        beta[idx] = math.sqrt(sigma2 / n) * float(b)
        supports.append(idx)
        start += c
    return beta, supports


@dataclass
class SimulationConfig:
    n: int = 100
    p: int = 200
    sigma_kind: str = "equicorrelated"
    rho: float = 0.8
    b_groups: list = field(default_factory=lambda: [[2.0, 3]])
    noise_sigma2: float = 1.0
    error_family: str = "gaussian"
    error_df: float = 5.0
    design_family: str = "gaussian"
    design_df: float = 5.0
    replications: int = 200
    methods: list = field(default_factory=lambda: ["mpi", "rls", "rid"])
    k: int | None = None
    n_draws: int = 1000
    gamma: float = 1.0
    rls_solver: str = "ensemble"
    v_samples: int = 10_000
    cv_folds: int = 10
    n_lambdas: int = 100
    alpha: float = 0.05
    seed: int = 0
    redraw_design: bool = True

    def validate(self):
        def bad(name, why):
            raise ConfigError(f"invalid '{name}': {why}")

        if self.n < 2 or self.p < 2:
            bad("n" if self.n < 2 else "p", "must be at least 2")
        if self.sigma_kind not in SIGMA_KINDS:
            bad("sigma_kind", f"must be one of {SIGMA_KINDS}")
        if self.sigma_kind == "equicorrelated" and not -1.0 / (self.p - 1) < self.rho < 1.0:
            bad("rho", f"equicorrelation must lie in (-1/(p-1), 1), got {self.rho}")
        if self.sigma_kind == "toeplitz" and not -1.0 < self.rho < 1.0:
            bad("rho", f"Toeplitz correlation must lie in (-1, 1), got {self.rho}")
        try:
            counts = [int(c) for _, c in self.b_groups]
        except (TypeError, ValueError):
            bad("b_groups", "expected a list of [b, count] pairs")
        if any(c < 0 for c in counts) or sum(counts) > self.p:
            bad("b_groups", f"counts must be nonnegative and sum to at most p={self.p}")
        if not self.noise_sigma2 > 0:
            bad("noise_sigma2", "must be positive")
        if self.error_family not in FAMILIES:
            bad("error_family", f"must be one of {FAMILIES}")
        if self.design_family not in FAMILIES:
            bad("design_family", f"must be one of {FAMILIES}")
        if self.error_family == "student_t" and not self.error_df > 2:
            bad("error_df", "must exceed 2")
        if self.design_family == "student_t" and not self.design_df > 0:
            bad("design_df", "must be positive")
        if self.replications < 1:
            bad("replications", "must be at least 1")
        for m in self.methods:
            if m not in {x.value for x in Method}:
                bad("methods", f"unknown method {m!r}")
        if self.k is not None and not 1 <= self.k <= self.n:
            bad("k", "must satisfy 1 <= k <= n")
        if self.n_draws < 1:
            bad("n_draws", "must be at least 1")
        if not self.gamma > 0:
            bad("gamma", "must be positive")
        if self.rls_solver not in ("ensemble", "spectral"):
            bad("rls_solver", "must be 'ensemble' or 'spectral'")
        if not 2 <= self.cv_folds <= self.n:
            bad("cv_folds", "must satisfy 2 <= cv_folds <= n")
        if self.n_lambdas < 1:
            bad("n_lambdas", "must be at least 1")
        if not 0 < self.alpha < 1:
            bad("alpha", "must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            bad("seed", "must be a 64-bit unsigned integer")
        return self

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**data).validate()

    def to_dict(self):
        return asdict(self)


@dataclass
class Cell:
    method: str
    b: float
    coef: float
    se: float
    cr: float
    power: float | None
    count: int  # replications contributing to the cell
    n_coefficients: int  # coefficient instances pooled over replications


@dataclass
class ExperimentReport:
    cells: list
    diagnostics: dict
    replications: int
    redraws: int
    config: dict

    def cell(self, method, b):
        for c in self.cells:
            if c.method == method and c.b == b:
                return c
        raise KeyError((method, b))

    CSV_COLUMNS = ("method", "b", "coef", "se", "cr", "power")

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_COLUMNS)
        for c in self.cells:
            writer.writerow([c.method, _fmt(c.b), _fmt(c.coef), _fmt(c.se), _fmt(c.cr),
                             "" if c.power is None else _fmt(c.power)])
        return buf.getvalue()

    def to_dict(self):
        return {
            "cells": [asdict(c) for c in self.cells],
            "diagnostics": self.diagnostics,
            "replications": self.replications,
            "redraws": self.redraws,
            "config": self.config,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _fmt(x):
    return repr(float(x))


def _group_layout(config):
    """b values per reported group: configured groups, then the zero coefficients."""
    return [float(b) for b, _ in config.b_groups] + [0.0]


def _replicate(config, stream, factor, X_fixed):
    """One replication; returns per-(method, group) sums or raises NumericalError."""
    n, p = config.n, config.p
    X = X_fixed if X_fixed is not None else sample_design(
        n, p, None, config.design_family, stream.child(0), config.design_df, factor=factor)
    beta, supports = make_beta(p, config.b_groups, config.noise_sigma2, n, stream.child(1))
    eps = sample_errors(n, config.noise_sigma2, config.error_family, stream.child(2),
                        config.error_df)
    y = X @ beta + eps

    lam, init = cv_lasso(X, y, config.cv_folds, config.n_lambdas, stream.child(3))
    sigma2 = noise_level(init, n)

    zero = np.ones(p, dtype=bool)
    for idx in supports:
        zero[idx] = False
    groups = list(supports) + [np.flatnonzero(zero)]

    stats = np.zeros((len(config.methods), len(groups), 5))  # coef, se, cover, reject, count
    offdiag = np.zeros(len(config.methods))
    for mi, method in enumerate(config.methods):
        inv = build_inverse(X, method, k=config.k, ensemble_size=config.n_draws,
                            gamma=config.gamma, rng=stream.child(4 + mi),
                            rls_solver=config.rls_solver, v_samples=config.v_samples)
        beta_c = debias(inv, X, y, init.beta)
        fit = confidence_intervals(beta_c, omega_diagonal(inv).values, sigma2, n,
                                   config.alpha, inv.method)
        se = fit.se
        covered = (fit.ci_lower <= beta) & (beta <= fit.ci_upper)
        rejects = (fit.ci_lower > 0) | (fit.ci_upper < 0)
        for gi, idx in enumerate(groups):
            stats[mi, gi] = (beta_c[idx].sum(), se[idx].sum(), covered[idx].sum(),
                             rejects[idx].sum(), idx.size)
        offdiag[mi] = max_offdiag(inv, X)
    return {"stats": stats, "offdiag": offdiag, "sigma2": sigma2, "lambda": lam,
            "support": init.support_size}


def _worker_count(n_jobs):
    cap = os.environ.get("HDINFER_THREADS")
    if n_jobs is None:
        n_jobs = int(cap) if cap else 1
    elif cap:
        n_jobs = min(int(n_jobs), int(cap))
    return max(1, int(n_jobs))


def run_experiment(config: SimulationConfig, n_jobs=None) -> ExperimentReport:
    """Replicate the data generating process and tabulate coef/SE/coverage/power.

    Coverage counts replications whose interval contains the true coefficient;
    power counts intervals of nonzero coefficients that exclude zero.  A
    replication that fails numerically is redrawn from a fresh child stream;
    more than ``max(1, 5%)`` redraws abort with ReplicationFailure.
    """
    config.validate()
    root = RngStream(config.seed)
    factor = spd_factor(make_sigma(config.sigma_kind, config.p, config.rho)).factor
    X_fixed = None
    if not config.redraw_design:
        X_fixed = sample_design(config.n, config.p, None, config.design_family,
                                root.child(2**32), config.design_df, factor=factor)

    def attempt(r, a):
        stream = root.child(r) if a == 0 else root.child(r).child(1000 + a)
        try:
            return _replicate(config, stream, factor, X_fixed)
        except (NumericalError, NotPositiveDefinite) as exc:
            return exc

    R = config.replications
    workers = _worker_count(n_jobs)
    if workers > 1 and R > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=workers)(delayed(attempt)(r, 0) for r in range(R))
    else:
        results = [attempt(r, 0) for r in range(R)]

    budget = max(1, int(0.05 * R))
    redraws = 0
    for r in range(R):
        a = 0
        while isinstance(results[r], Exception):
            redraws += 1
            a += 1
            log.warning("replication %d attempt %d failed: %s; redrawing", r, a, results[r])
            if redraws > budget:
                raise ReplicationFailure(
                    f"{redraws} replications failed (budget {budget}); last error: {results[r]}"
                )
            results[r] = attempt(r, a)

    bs = _group_layout(config)
    cells = []
    diagnostics = {"max_offdiag": {}, "sigma2_hat": None, "lambda": None, "support_size": None}
    if results:
        stats = sum((res["stats"] for res in results), np.zeros_like(results[0]["stats"]))
        offdiag = np.mean([res["offdiag"] for res in results], axis=0)
        for mi, method in enumerate(config.methods):
            for gi, b in enumerate(bs):
                coef, se, cover, reject, count = stats[mi, gi]
                if count == 0:
                    continue
                cells.append(Cell(
                    method=method, b=b, coef=coef / count, se=se / count, cr=cover / count,
                    power=None if b == 0 else reject / count, count=R,
                    n_coefficients=int(count),
                ))
            diagnostics["max_offdiag"][method] = float(offdiag[mi])
        diagnostics["sigma2_hat"] = float(np.mean([res["sigma2"] for res in results]))
        diagnostics["sigma2_hat_median"] = float(np.median([res["sigma2"] for res in results]))
        diagnostics["lambda"] = float(np.mean([res["lambda"] for res in results]))
        diagnostics["support_size"] = float(np.mean([res["support"] for res in results]))
    return ExperimentReport(cells, diagnostics, R, redraws, config.to_dict())


def check_variance_ordering(X, k=None, gamma=1.0, shared_D_source="mpi", v_samples=10_000,
                            rng=None):
    """Compare ``Omega_jj`` of the three inverses under one shared diagonal scaling.

    ``Omega_jj(D) = n d_j^2 ||m_tilde_j||^2`` with ``d`` taken from
    ``shared_D_source``.  The random least squares map uses the spectral path.
    Differences against the Moore-Penrose variances are reported for the shared
    scaling and, unasserted, for each method's own scaling.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if k is None:
        k = int(np.floor(0.9 * n))
    invs = {
        "mpi": mpi_inverse(X),
        "rls": rls_inverse_spectral(X, k, v_samples, rng),
        "rid": ridge_inverse(X, gamma),
    }
    if shared_D_source not in invs:
        raise ConfigError(f"shared_D_source must be one of {sorted(invs)}")
    d = invs[shared_D_source].d
    row_sq = {m: np.einsum("ji,ji->j", inv.M_tilde, inv.M_tilde) for m, inv in invs.items()}
    shared = {m: n * d**2 * row_sq[m] for m in invs}
    own = {m: omega_diagonal(inv).values for m, inv in invs.items()}
    median = float(np.median(shared["mpi"]))
    return {
        "n": n, "p": X.shape[1], "k": k, "gamma": gamma, "shared_D_source": shared_D_source,
        "median_omega_mpi": median,
        "max_diff_rls": float(np.max(shared["rls"] - shared["mpi"])),
        "max_diff_rid": float(np.max(shared["rid"] - shared["mpi"])),
        "own_D_max_diff_rls": float(np.max(own["rls"] - own["mpi"])),
        "own_D_max_diff_rid": float(np.max(own["rid"] - own["mpi"])),
        "own_D_frac_rls_below": float(np.mean(own["rls"] <= own["mpi"])),
        "own_D_frac_rid_below": float(np.mean(own["rid"] <= own["mpi"])),
    }


def check_bias_scale(grid=((50, 100), (100, 200), (200, 400)), seeds=50, method="mpi",
                     sigma_kind="identity", rho=0.0, seed=0, max_variation=0.2, **inverse_kw):
    """Median of ``max_offdiag(MX) / sqrt(log p / n)`` per grid point.

    The ratio should stay bounded as ``n`` grows; ``variation`` is
    ``max(medians) / min(medians) - 1`` and ``passed`` compares it with
    ``max_variation``.  ``seed`` may be an integer or an :class:`RngStream`.
    """
    root = seed if isinstance(seed, RngStream) else RngStream(seed)
    medians = []
    for gi, (n, p) in enumerate(grid):
        if not n < p:
            raise OutOfDomain(f"grid point (n={n}, p={p}) needs n < p")
        factor = spd_factor(make_sigma(sigma_kind, p, rho)).factor
        ratios = []
        for s in range(seeds):
            stream = root.child(gi).child(s)
            X = sample_design(n, p, None, "gaussian", stream.child(0), factor=factor)
            inv = build_inverse(X, method, rng=stream.child(1), **inverse_kw)
            ratios.append(max_offdiag(inv, X) / math.sqrt(math.log(p) / n))
        medians.append(float(np.median(ratios)))
    variation = max(medians) / min(medians) - 1.0 if min(medians) > 0 else 0.0
    return {
        "grid": [list(g) for g in grid], "seeds": seeds, "method": method,
        "sigma_kind": sigma_kind, "rho": rho, "median_ratio": medians,
        "variation": variation, "passed": bool(variation < max_variation),
    }


def check_ridge_limit(X, scale=1e-8):
    """Relative Frobenius distance between the ridge map at ``gamma = scale * p`` and MPI."""
    X = np.asarray(X, dtype=float)
    gamma = scale * X.shape[1]
    M_rid = ridge_inverse(X, gamma).M
    M_mpi = mpi_inverse(X).M
    return float(np.linalg.norm(M_rid - M_mpi) / np.linalg.norm(M_mpi))


def check_rls_exactness(X, ensemble_size=1, v_samples=10, rng=None):
    """Max entrywise distance from MPI of both RLS paths at ``k = n``."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    stream = rng if isinstance(rng, RngStream) else RngStream(0 if rng is None else int(rng))
    M_mpi = mpi_inverse(X).M
    ens = rls_inverse_ensemble(X, n, ensemble_size, stream.child(0)).M
    spectral = rls_inverse_spectral(X, n, v_samples, stream.child(1)).M
    return {"ensemble": float(np.abs(ens - M_mpi).max()),
            "spectral": float(np.abs(spectral - M_mpi).max())}
