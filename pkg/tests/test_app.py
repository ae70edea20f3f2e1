import json
import os

import numpy as np
import pytest

from hdinfer.app import FitConfig, run_fit
from hdinfer.cli import main


def write_dataset(path, seed, n_rows=114, p=231, strong=(1.0, 0.8, 0.6), missing=True):
    """Synthetic panel: target 'y', regressors x0..x{p-1}, date labels."""
    g = np.random.default_rng(seed)
    X = g.standard_normal((n_rows, p))
    beta = np.zeros(p)
    strong_idx = g.choice(p, len(strong) + 3, replace=False)
    beta[strong_idx[:len(strong)]] = strong
    beta[strong_idx[len(strong):]] = 0.1
    y = X @ beta + g.standard_normal(n_rows)
    header = ["date", "y"] + [f"x{j}" for j in range(p)]
    lines = [",".join(header)]
    for i in range(n_rows):
        cells = [f"t{i:04d}", repr(float(y[i]))] + [repr(float(v)) for v in X[i]]
        if missing and i in (7, 30):
            cells[2 + i] = "NA"
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [f"x{j}" for j in strong_idx[:len(strong)]]


def write_config(path, **kw):
    path.write_text(json.dumps(kw), encoding="utf-8")
    return path


def read_outputs(out_dir):
    return {name: (out_dir / name).read_bytes() for name in sorted(os.listdir(out_dir))}


@pytest.fixture
def fit_setup(tmp_path):
    strong = write_dataset(tmp_path / "data.csv", 0)
    cfg = write_config(tmp_path / "fit.json", data="data.csv", target="y",
                       index_column="date", lags=4)
    return tmp_path, cfg, strong


class TestFit:
    def test_outputs(self, fit_setup, capsys):
        tmp, cfg, strong = fit_setup
        assert main(["fit", "--config", str(cfg), "--out-dir", str(tmp / "out")]) == 0
        out = tmp / "out"
        assert sorted(os.listdir(out)) == ["coefficients.csv", "manifest.json", "significant.csv"]
        coef = (out / "coefficients.csv").read_text().splitlines()
        assert coef[0] == "index,name,coef,se,ci_lo,ci_hi,significant"
        assert len(coef) == 1 + 231
        sig = (out / "significant.csv").read_text().splitlines()
        sig_names = {line.split(",")[1] for line in sig[1:]}
        flagged = {line.split(",")[1] for line in coef[1:] if line.endswith(",1")}
        assert sig_names == flagged and set(strong) <= sig_names
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["target"] == "y" and manifest["seed"] == 0
        assert manifest["dimensions"] == {"rows": 110, "regressors": 231, "controls": 5,
                                          "effective_n": 105}
        assert {"numpy", "scipy", "hdinfer"} <= set(manifest["versions"])

    def test_byte_identical(self, fit_setup):
        tmp, cfg, _ = fit_setup
        for d in ("a", "b"):
            assert main(["fit", "--config", str(cfg), "--out-dir", str(tmp / d)]) == 0
        assert read_outputs(tmp / "a") == read_outputs(tmp / "b")

    def test_overrides(self, fit_setup):
        tmp, cfg, _ = fit_setup
        args = ["fit", "--config", str(cfg), "--out-dir", str(tmp / "o"), "--method", "rid",
                "--alpha", "0.1", "--seed", "5"]
        assert main(args) == 0
        m = json.loads((tmp / "o" / "manifest.json").read_text())
        assert (m["config"]["method"], m["config"]["alpha"], m["seed"]) == ("rid", 0.1, 5)

    def test_rls_application_settings(self, fit_setup):
        tmp, _, _ = fit_setup
        cfg = write_config(tmp / "rls.json", data="data.csv", target="y", index_column="date",
                           method="rls", k=95, n_draws=1000)
        model = run_fit(FitConfig.from_dict(json.loads(cfg.read_text())), tmp / "rls",
                        base_dir=tmp)
        assert model.inverse_.tuning.k == 95 and model.inverse_.tuning.ensemble_size == 1000
        assert (tmp / "rls" / "coefficients.csv").exists()

    def test_no_temporary_files_left(self, fit_setup):
        tmp, cfg, _ = fit_setup
        main(["fit", "--config", str(cfg), "--out-dir", str(tmp / "out")])
        assert not [f for f in os.listdir(tmp / "out") if f.endswith(".tmp")]

    @pytest.mark.slow
    def test_strong_coefficients_recovered(self, tmp_path):
        seeds = 20
        hits = 0
        for s in range(seeds):
            d = tmp_path / f"s{s}"
            d.mkdir()
            strong = write_dataset(d / "data.csv", 100 + s, missing=False)
            cfg = FitConfig(data="data.csv", target="y", index_column="date", seed=s)
            model = run_fit(cfg, d / "out", base_dir=d)
            names = [f"x{j}" for j in range(231)]
            found = {names[j] for j in model.significant_features()}
            hits += set(strong) <= found
        assert hits / seeds >= 0.9


class TestErrors:
    def test_ragged_csv_exit_3(self, tmp_path, capsys):
        (tmp_path / "d.csv").write_text("y,x\n1,2\n3\n")
        cfg = write_config(tmp_path / "c.json", data="d.csv", target="y", lags=0)
        assert main(["fit", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 3
        err = capsys.readouterr().err
        assert "stage 'read'" in err and "row 3" in err

    def test_missing_data_file_exit_3(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", data="nope.csv", target="y")
        assert main(["fit", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 3

    def test_leading_missing_stage(self, tmp_path, capsys):
        (tmp_path / "d.csv").write_text("y,x\nNA,2\n3,4\n5,6\n")
        cfg = write_config(tmp_path / "c.json", data="d.csv", target="y", lags=1)
        assert main(["fit", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 3
        assert "stage 'fill'" in capsys.readouterr().err

    def test_bad_config_exit_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", data="d.csv", target="y", method="svd")
        assert main(["fit", "--config", str(cfg)]) == 2
        assert "'method'" in capsys.readouterr().err
        (tmp_path / "broken.json").write_text("{not json")
        assert main(["simulate", "--config", str(tmp_path / "broken.json")]) == 2

    def test_missing_target_column(self, tmp_path):
        (tmp_path / "d.csv").write_text("a,b\n1,2\n")
        cfg = write_config(tmp_path / "c.json", data="d.csv", target="y")
        assert main(["fit", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2

    def test_numerical_failure_exit_4(self, tmp_path, capsys):
        write_dataset(tmp_path / "data.csv", 1, n_rows=40, p=60, missing=False)
        cfg = write_config(tmp_path / "c.json", data="data.csv", target="y",
                           index_column="date", lags=0, lasso_lambda=1e-6)
        assert main(["fit", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 4
        assert "stage 'fit'" in capsys.readouterr().err

    def test_invalid_rho_names_field(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "s.json", rho=1.5)
        assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
        assert "'rho'" in capsys.readouterr().err

    def test_argparse_errors(self):
        with pytest.raises(SystemExit) as info:
            main(["fit", "--method", "svd"])
        assert info.value.code == 2


SMOKE = dict(replications=1, n_draws=100, v_samples=500)


class TestSimulate:
    def test_smoke_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path / "s.json", **SMOKE)
        for d in ("a", "b"):
            assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / d)]) == 0
        a, b = read_outputs(tmp_path / "a"), read_outputs(tmp_path / "b")
        assert a == b and set(a) == {"experiment.csv", "experiment.json", "manifest.json"}

    def test_mpi_cell_row(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "s.json", **SMOKE)
        assert main(["simulate", "--config", str(cfg), "--method", "mpi", "--seed", "3",
                     "--out-dir", str(tmp_path)]) == 0
        rows = (tmp_path / "experiment.csv").read_text().splitlines()
        assert rows[0] == "method,b,coef,se,cr,power"
        method, b, *metrics = rows[1].split(",")
        assert (method, b) == ("mpi", "2.0") and len(metrics) == 4
        assert all(np.isfinite(float(v)) for v in metrics)
        assert rows[2].startswith("mpi,0.0,")
        assert json.loads((tmp_path / "manifest.json").read_text())["seed"] == 3


DIAG = dict(ordering_designs=2, v_samples=2000, bias_seeds=5, ridge_designs=3)


class TestDiagnose:
    def test_report_and_determinism(self, tmp_path):
        cfg = write_config(tmp_path / "d.json", **DIAG)
        for d in ("a", "b"):
            assert main(["diagnose", "--config", str(cfg), "--out-dir", str(tmp_path / d)]) == 0
        a, b = read_outputs(tmp_path / "a"), read_outputs(tmp_path / "b")
        assert a == b
        report = json.loads(a["diagnostics.json"])
        checks = report["checks"]
        assert set(checks) == {"variance_ordering", "bias_scale", "ridge_limit", "rls_exactness"}
        assert checks["ridge_limit"]["max_rel_frobenius"] <= 1e-6
        assert checks["variance_ordering"]["max_diff_rid"] <= 0
        assert checks["variance_ordering"]["max_rel_diff_rls"] <= 1e-3

    def test_default_all_pass(self, tmp_path):
        assert main(["diagnose", "--out-dir", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "diagnostics.json").read_text())["all_passed"]

    def test_invalid(self, tmp_path):
        cfg = write_config(tmp_path / "d.json", bias_grid=[[100, 50], [20, 40]])
        assert main(["diagnose", "--config", str(cfg)]) == 2
