"""Run configurations and the ``fit``/``simulate``/``diagnose`` pipelines.

Every run writes its outputs atomically into an output directory together with
``manifest.json`` holding the resolved configuration, the seed and the library
versions.  Given the same inputs, configuration and seed the output bytes are
identical.
"""

import contextlib
import json
import os
import platform
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .approx_inverse import Method
from .data import (
    apply_transforms,
    build_lags,
    fill_missing,
    read_csv,
    standardize,
    write_csv_rows,
)
from .estimators import DebiasedRegression
from .exceptions import ConfigError, DataError, HDInferError
from .linalg import RngStream, spd_factor
from .simulation import (
    SIGMA_KINDS,
    SimulationConfig,
    check_bias_scale,
    check_ridge_limit,
    check_rls_exactness,
    check_variance_ordering,
    make_sigma,
    run_experiment,
    sample_design,
)

METHODS = tuple(m.value for m in Method)


def _bad(name, why):
    raise ConfigError(f"invalid '{name}': {why}")


def _from_dict(cls, data):
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(data) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    try:
        return cls(**data).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


@dataclass
class FitConfig:
    """Settings of the ``fit`` pipeline.

    ``data`` is resolved relative to the configuration file.  Regressors are all
    columns other than ``target``, ``index_column``, ``exclude`` and
    ``controls``; the intercept, ``lags`` lags of the target and the
    ``controls`` columns are partialled out.
    """

    data: str = ""
    target: str = ""
    index_column: str | None = None
    exclude: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    transforms: dict = field(default_factory=dict)
    lags: int = 4
    intercept: bool = True
    method: str = "mpi"
    k: int | None = None
    n_draws: int = 1000
    gamma: float = 1.0
    rls_solver: str = "ensemble"
    v_samples: int = 10_000
    alpha: float = 0.05
    lasso_lambda: float | None = None
    cv_folds: int = 10
    n_lambdas: int = 100
    seed: int = 0

    def validate(self):
        if not self.data:
            _bad("data", "path to the input CSV is required")
        if not self.target:
            _bad("target", "name of the dependent variable is required")
        if not isinstance(self.lags, int) or self.lags < 0:
            _bad("lags", "must be a nonnegative integer")
        if self.method not in METHODS:
            _bad("method", f"must be one of {METHODS}")
        if self.k is not None and not (isinstance(self.k, int) and self.k >= 1):
            _bad("k", "must be a positive integer")
        if self.n_draws < 1:
            _bad("n_draws", "must be at least 1")
        if not self.gamma > 0:
            _bad("gamma", "must be positive")
        if self.rls_solver not in ("ensemble", "spectral"):
            _bad("rls_solver", "must be 'ensemble' or 'spectral'")
        if self.v_samples < 1:
            _bad("v_samples", "must be at least 1")
        if not 0 < self.alpha < 1:
            _bad("alpha", "must lie in (0, 1)")
        if self.lasso_lambda is not None and not self.lasso_lambda > 0:
            _bad("lasso_lambda", "must be positive")
        if self.cv_folds < 2:
            _bad("cv_folds", "must be at least 2")
        if self.n_lambdas < 1:
            _bad("n_lambdas", "must be at least 1")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            _bad("seed", "must be a 64-bit unsigned integer")
        if self.target in self.controls or self.target in self.exclude:
            _bad("target", "cannot also be a control or excluded column")
        return self

    @classmethod
    def from_dict(cls, data):
        return _from_dict(cls, data)


@dataclass
class DiagnoseConfig:
    """Settings of the ``diagnose`` checks; every check runs on seeded designs."""

    seed: int = 0
    method: str = "mpi"
    ordering_designs: int = 20
    ordering_n: int = 50
    ordering_p: int = 120
    ordering_sigma_kind: str = "identity"
    ordering_rho: float = 0.0
    ordering_k: int | None = None
    gamma: float = 1.0
    v_samples: int = 10_000
    ordering_rls_tol: float = 1e-3
    ordering_rid_tol: float = 1e-12
    bias_grid: list = field(default_factory=lambda: [[50, 100], [100, 200], [200, 400]])
    bias_seeds: int = 50
    bias_max_variation: float = 0.2
    ridge_designs: int = 10
    ridge_n: int = 10
    ridge_p: int = 30
    ridge_scale: float = 1e-8
    ridge_tol: float = 1e-6
    exactness_n: int = 10
    exactness_p: int = 30
    exactness_tol: float = 1e-8

    def validate(self):
        if self.method not in METHODS:
            _bad("method", f"must be one of {METHODS}")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            _bad("seed", "must be a 64-bit unsigned integer")
        for name in ("ordering_designs", "bias_seeds", "ridge_designs", "v_samples"):
            if getattr(self, name) < 1:
                _bad(name, "must be at least 1")
        for prefix in ("ordering", "ridge", "exactness"):
            n, p = getattr(self, f"{prefix}_n"), getattr(self, f"{prefix}_p")
            if not 2 <= n < p:
                _bad(f"{prefix}_n", f"need 2 <= n < p, got n={n}, p={p}")
        if self.ordering_sigma_kind not in SIGMA_KINDS:
            _bad("ordering_sigma_kind", f"must be one of {SIGMA_KINDS}")
        if not -1 < self.ordering_rho < 1:
            _bad("ordering_rho", "must lie in (-1, 1)")
        if self.ordering_k is not None and not 1 <= self.ordering_k <= self.ordering_n:
            _bad("ordering_k", "must satisfy 1 <= k <= n")
        if not self.gamma > 0:
            _bad("gamma", "must be positive")
        if not self.ridge_scale > 0:
            _bad("ridge_scale", "must be positive")
        try:
            grid = [(int(n), int(p)) for n, p in self.bias_grid]
        except (TypeError, ValueError):
            _bad("bias_grid", "expected a list of [n, p] pairs")
        if len(grid) < 2 or any(not 2 <= n < p for n, p in grid):
            _bad("bias_grid", "need at least two points with 2 <= n < p")
        return self

    @classmethod
    def from_dict(cls, data):
        return _from_dict(cls, data)


def load_config(path):
    """Parse a JSON configuration file into a dict."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: configuration must be a JSON object")
    return data


@contextlib.contextmanager
def stage(name):
    """Tag errors raised inside the block with the pipeline stage that failed."""
    try:
        yield
    except HDInferError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
        raise


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise
    return path


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def versions():
    import numba
    import scipy
    import sklearn

    from . import __version__

    return {
        "hdinfer": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "numba": numba.__version__,
    }


def _manifest(command, config, seed, outputs, **extra):
    return {"command": command, "config": config, "seed": seed, "versions": versions(),
            "outputs": sorted(outputs), **extra}


def _fmt(x):
    return repr(float(x))


def run_fit(config: FitConfig, out_dir, base_dir="."):
    """Run the empirical pipeline and write the coefficient tables.

    Stages: read, transform, fill, standardize, lags, partial_out, fit.  Writes
    ``coefficients.csv`` (every regressor), ``significant.csv`` (regressors
    whose interval excludes zero) and ``manifest.json``.  Returns the fitted
    :class:`DebiasedRegression`.
    """
    config.validate()
    out_dir = Path(out_dir)
    with stage("read"):
        path = Path(base_dir) / config.data
        try:
            ds = read_csv(path, config.index_column)
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc.strerror}") from None
        for name in [config.target, *config.controls, *config.exclude, *config.transforms]:
            ds.column(name)
    with stage("transform"):
        ds = apply_transforms(ds, config.transforms)
    with stage("fill"):
        ds = fill_missing(ds)
    with stage("standardize"):
        ds, _, _ = standardize(ds)
    with stage("lags"):
        if config.lags:
            ds = build_lags(ds, config.target, config.lags)
    lag_names = [f"{config.target}_lag{l}" for l in range(1, config.lags + 1)]
    dropped = {config.target, *config.exclude, *config.controls, *lag_names}
    regressors = [c for c in ds.columns if c not in dropped]
    if not regressors:
        raise ConfigError("no regressors left after removing target, controls and exclusions")
    n_rows = ds.n_rows
    y = ds.column(config.target)
    X = ds.select(regressors).values
    Z_parts = ([np.ones((n_rows, 1))] if config.intercept else []) + \
        [ds.select(lag_names + list(config.controls)).values]
    Z = np.column_stack(Z_parts) if Z_parts else np.empty((n_rows, 0))

    model = DebiasedRegression(
        method=config.method, k=config.k, n_draws=config.n_draws, gamma=config.gamma,
        rls_solver=config.rls_solver, v_samples=config.v_samples, alpha=config.alpha,
        lasso_lambda=config.lasso_lambda, cv=config.cv_folds, n_lambdas=config.n_lambdas,
        random_state=config.seed,
    )
    with stage("fit"):
        model.fit(X, y, controls=Z if Z.shape[1] else None)

    sig = set(model.significant_features())
    header = ["index", "name", "coef", "se", "ci_lo", "ci_hi", "significant"]
    rows = [[j, name, _fmt(model.coef_[j]), _fmt(model.stderr_[j]),
             _fmt(model.conf_int_[j, 0]), _fmt(model.conf_int_[j, 1]), int(j in sig)]
            for j, name in enumerate(regressors)]
    with stage("write"):
        atomic_write(out_dir / "coefficients.csv", write_csv_rows(header, rows))
        atomic_write(out_dir / "significant.csv",
                     write_csv_rows(header[:-1], [r[:-1] for r in rows if r[-1]]))
        manifest = _manifest(
            "fit", asdict(config), config.seed,
            ["coefficients.csv", "significant.csv", "manifest.json"],
            dimensions={"rows": n_rows, "regressors": len(regressors), "controls": Z.shape[1],
                        "effective_n": int(model.n_effective_)},
            lasso={"lambda": float(model.lambda_),
                   "support_size": int(np.count_nonzero(model.init_coef_))},
            sigma2=float(model.sigma2_),
            significant=[regressors[j] for j in sorted(sig)],
        )
        atomic_write(out_dir / "manifest.json", _json(manifest))
    return model


def run_simulate(config: SimulationConfig, out_dir, n_jobs=None):
    """Run a Monte Carlo experiment; writes ``experiment.csv``/``.json`` and the manifest."""
    config.validate()
    out_dir = Path(out_dir)
    with stage("simulate"):
        report = run_experiment(config, n_jobs=n_jobs)
    with stage("write"):
        atomic_write(out_dir / "experiment.csv", report.to_csv())
        atomic_write(out_dir / "experiment.json", report.to_json())
        atomic_write(out_dir / "manifest.json", _json(_manifest(
            "simulate", config.to_dict(), config.seed,
            ["experiment.csv", "experiment.json", "manifest.json"])))
    return report


def _designs(count, n, p, kind, rho, stream):
    factor = spd_factor(make_sigma(kind, p, rho)).factor
    for i in range(count):
        yield sample_design(n, p, None, "gaussian", stream.child(i), factor=factor)


def run_diagnose(config: DiagnoseConfig, out_dir):
    """Run the structural checks and write ``diagnostics.json`` with pass/fail per check."""
    config.validate()
    root = RngStream(config.seed)
    checks = {}

    with stage("variance_ordering"):
        runs = []
        for i, X in enumerate(_designs(config.ordering_designs, config.ordering_n,
                                       config.ordering_p, config.ordering_sigma_kind,
                                       config.ordering_rho, root.child(0))):
            for source in METHODS:
                runs.append(check_variance_ordering(
                    X, k=config.ordering_k, gamma=config.gamma, shared_D_source=source,
                    v_samples=config.v_samples, rng=root.child(1).child(i)))
        rls = max(r["max_diff_rls"] / r["median_omega_mpi"] for r in runs)
        rid = max(r["max_diff_rid"] for r in runs)
        checks["variance_ordering"] = {
            "designs": config.ordering_designs, "shared_D_sources": list(METHODS),
            "k": runs[0]["k"],
            "max_rel_diff_rls": rls, "max_diff_rid": rid,
            "own_D_frac_rls_below": float(np.mean([r["own_D_frac_rls_below"] for r in runs])),
            "own_D_frac_rid_below": float(np.mean([r["own_D_frac_rid_below"] for r in runs])),
            "tolerance_rls": config.ordering_rls_tol, "tolerance_rid": config.ordering_rid_tol,
            "passed": bool(rls <= config.ordering_rls_tol and rid <= config.ordering_rid_tol),
        }

    with stage("bias_scale"):
        checks["bias_scale"] = check_bias_scale(
            grid=tuple(tuple(g) for g in config.bias_grid), seeds=config.bias_seeds,
            method=config.method, seed=root.child(2),
            max_variation=config.bias_max_variation, gamma=config.gamma)
        checks["bias_scale"]["tolerance"] = config.bias_max_variation

    with stage("ridge_limit"):
        dist = [check_ridge_limit(X, config.ridge_scale)
                for X in _designs(config.ridge_designs, config.ridge_n, config.ridge_p,
                                  "identity", 0.0, root.child(3))]
        checks["ridge_limit"] = {
            "designs": len(dist), "gamma_over_p": config.ridge_scale,
            "max_rel_frobenius": max(dist), "tolerance": config.ridge_tol,
            "passed": bool(max(dist) <= config.ridge_tol),
        }

    with stage("rls_exactness"):
        X = next(_designs(1, config.exactness_n, config.exactness_p, "identity", 0.0,
                          root.child(4)))
        res = check_rls_exactness(X, rng=root.child(5))
        worst = max(res.values())
        checks["rls_exactness"] = {**res, "tolerance": config.exactness_tol,
                                   "passed": bool(worst <= config.exactness_tol)}

    report = {"checks": checks, "all_passed": all(c["passed"] for c in checks.values())}
    with stage("write"):
        atomic_write(Path(out_dir) / "diagnostics.json", _json(report))
        atomic_write(Path(out_dir) / "manifest.json", _json(_manifest(
            "diagnose", asdict(config), config.seed, ["diagnostics.json", "manifest.json"])))
    return report
