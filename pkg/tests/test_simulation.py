import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdinfer.exceptions import ConfigError, NotPositiveDefinite, TooManyNonzeros
from hdinfer.linalg import RngStream
from hdinfer.simulation import (
    SimulationConfig,
    check_bias_scale,
    check_ridge_limit,
    check_rls_exactness,
    check_variance_ordering,
    make_beta,
    make_sigma,
    run_experiment,
    sample_design,
    sample_errors,
)


def small_config(**kw):
    base = dict(n=30, p=60, replications=4, n_draws=50, v_samples=200, cv_folds=5,
                n_lambdas=30, seed=9)
    base.update(kw)
    return SimulationConfig(**base)


class TestDGP:
    def test_equicorrelated(self):
        np.testing.assert_array_equal(make_sigma("equicorrelated", 2, 0.8), [[1, 0.8], [0.8, 1]])

    def test_toeplitz(self):
        np.testing.assert_allclose(make_sigma("toeplitz", 3, 0.9),
                                   [[1, 0.9, 0.81], [0.9, 1, 0.9], [0.81, 0.9, 1]], rtol=1e-15)

    @pytest.mark.parametrize("kind", ["equicorrelated", "toeplitz", "identity"])
    def test_zero_rho_identity(self, kind):
        np.testing.assert_array_equal(make_sigma(kind, 4, 0.0), np.eye(4))

    def test_not_pd(self):
        with pytest.raises(NotPositiveDefinite):
            make_sigma("equicorrelated", 3, -0.6)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            make_sigma("banded", 3, 0.5)

    def test_design_deterministic(self):
        S = make_sigma("toeplitz", 5, 0.5)
        a = sample_design(10, 5, S, rng=RngStream(3))
        assert a.tobytes() == sample_design(10, 5, S, rng=RngStream(3)).tobytes()

    def test_design_covariance(self):
        S = make_sigma("equicorrelated", 2, 0.8)
        X = sample_design(20000, 2, S, rng=RngStream(4))
        assert np.abs(np.cov(X.T, bias=True) - S).max() <= 0.03

    def test_student_t_heavier_tails(self):
        S = np.eye(1)
        g = sample_design(20000, 1, S, "gaussian", RngStream(5))[:, 0]
        t = sample_design(20000, 1, S, "student_t", RngStream(5), df=3)[:, 0]

        def kurt(x):
            return np.mean((x - x.mean()) ** 4) / np.var(x) ** 2

        assert kurt(t) > kurt(g)

    def test_t_errors_have_target_variance(self):
        e = sample_errors(200000, 2.0, "student_t", RngStream(6), df=5)
        assert e.var() == pytest.approx(2.0, rel=0.05)

    def test_beta_value(self):
        beta, (idx,) = make_beta(200, [[2.0, 3]], 1.0, 100, RngStream(0))
        assert idx.size == 3
        np.testing.assert_allclose(beta[idx], 0.2)
        assert np.count_nonzero(beta) == 3

    def test_beta_two_groups(self):
        beta, (a, b) = make_beta(200, [[10.0, 3], [2.0, 12]], 1.0, 100, RngStream(1))
        assert np.count_nonzero(beta) == 15
        assert set(np.round(beta[beta != 0], 12)) == {1.0, 0.2}
        assert not set(a) & set(b)

    def test_beta_empty(self):
        beta, (idx,) = make_beta(10, [[2.0, 0]], 1.0, 100, RngStream(2))
        assert idx.size == 0 and not beta.any()

    def test_too_many(self):
        with pytest.raises(TooManyNonzeros):
            make_beta(5, [[1.0, 4], [1.0, 2]], 1.0, 10)

    @given(seed=st.integers(0, 2**32 - 1), count=st.integers(0, 30))
    def test_beta_support_uniform_subset(self, seed, count):
        beta, (idx,) = make_beta(30, [[1.0, count]], 4.0, 16, RngStream(seed))
        assert len(set(idx)) == count
        assert np.all(beta[idx] == 0.5)


class TestConfig:
    @pytest.mark.parametrize("field, value", [
        ("rho", 1.5), ("sigma_kind", "banded"), ("replications", 0), ("alpha", 1.0),
        ("methods", ["xyz"]), ("k", 500), ("gamma", 0.0), ("error_family", "cauchy"),
        ("b_groups", [[2.0, 500]]), ("cv_folds", 1),
    ])
    def test_invalid_field_named(self, field, value):
        with pytest.raises(ConfigError, match=f"'{field}'"):
            SimulationConfig(**{field: value}).validate()

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown"):
            SimulationConfig.from_dict({"nn": 3})

    def test_round_trip(self):
        cfg = small_config()
        assert SimulationConfig.from_dict(cfg.to_dict()) == cfg


class TestRunExperiment:
    def test_report_schema(self):
        rep = run_experiment(small_config())
        assert [(c.method, c.b) for c in rep.cells] == [
            ("mpi", 2.0), ("mpi", 0.0), ("rls", 2.0), ("rls", 0.0), ("rid", 2.0), ("rid", 0.0)]
        for c in rep.cells:
            assert 0 <= c.cr <= 1 and c.count == 4
            assert c.power is None if c.b == 0 else 0 <= c.power <= 1
        assert rep.cell("mpi", 2.0).n_coefficients == 12
        assert rep.cell("mpi", 0.0).n_coefficients == 4 * 57
        lines = rep.to_csv().splitlines()
        assert lines[0] == "method,b,coef,se,cr,power"
        assert len(lines) == 7 and lines[2].endswith(",")
        data = json.loads(rep.to_json())
        assert set(data["diagnostics"]["max_offdiag"]) == {"mpi", "rls", "rid"}
        assert data["config"]["seed"] == 9

    def test_deterministic_bytes(self):
        a = run_experiment(small_config())
        b = run_experiment(small_config())
        assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()

    def test_independent_of_workers(self):
        cfg = small_config(methods=["mpi"], replications=3)
        assert run_experiment(cfg, n_jobs=1).to_json() == run_experiment(cfg, n_jobs=2).to_json()

    def test_empty_methods(self):
        rep = run_experiment(small_config(methods=[], replications=1))
        assert rep.cells == []

    def test_fixed_design(self):
        rep = run_experiment(small_config(methods=["mpi"], redraw_design=False))
        assert rep.cell("mpi", 0.0).count == 4

    def test_student_t_configuration(self):
        cfg = small_config(methods=["rid"], error_family="student_t",
                           design_family="student_t", replications=2)
        assert run_experiment(cfg).cell("rid", 0.0).count == 2


class TestChecks:
    @pytest.mark.parametrize("source", ["mpi", "rls", "rid"])
    def test_shared_scaling_ordering(self, source):
        X = np.random.default_rng(3).standard_normal((30, 70))
        r = check_variance_ordering(X, v_samples=4000, shared_D_source=source, rng=RngStream(1))
        assert r["max_diff_rid"] <= 1e-12 * r["median_omega_mpi"]
        assert r["max_diff_rls"] <= 1e-3 * r["median_omega_mpi"]

    def test_ordering_degenerates(self):
        X = np.random.default_rng(4).standard_normal((10, 25))
        r = check_variance_ordering(X, k=10, gamma=1e-10, v_samples=5)
        assert abs(r["max_diff_rls"]) <= 1e-8 and abs(r["max_diff_rid"]) <= 1e-6

    def test_ordering_bad_source(self):
        with pytest.raises(ConfigError):
            check_variance_ordering(np.eye(2, 4) + 0.1, shared_D_source="x", v_samples=5)

    def test_bias_scale_report(self):
        r = check_bias_scale(grid=((20, 40), (40, 80)), seeds=5)
        assert len(r["median_ratio"]) == 2 and all(m > 0 for m in r["median_ratio"])
        assert r["passed"] == (r["variation"] < 0.2)

    def test_bias_scale_toeplitz_bounded(self):
        t = check_bias_scale(seeds=10, sigma_kind="toeplitz", rho=0.9)
        assert max(t["median_ratio"]) < 10 and t["variation"] < 0.5

    def test_ridge_limit(self):
        X = np.random.default_rng(5).standard_normal((10, 30))
        assert check_ridge_limit(X) <= 1e-6

    def test_rls_exactness(self):
        X = np.random.default_rng(6).standard_normal((10, 30))
        r = check_rls_exactness(X, rng=RngStream(2))
        assert r["ensemble"] <= 1e-8 and r["spectral"] <= 1e-8
