import filecmp

import numpy as np
import pytest

from ufpfts.cli import main, split_rhat
from ufpfts.io import read_table


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(d), "--seed", "4", "--runs", "4", "--bins", "12",
                 "--K", "4", "--L", "3"]) == 0
    cfg = d / "fit.ini"
    cfg.write_text(cfg.read_text().replace("iterations = 2000", "iterations = 60")
                   .replace("burn_in = 500", "burn_in = 20"))
    return d


@pytest.fixture(scope="module")
def fit_dir(sim_dir):
    out = sim_dir / "fit-a"
    assert main(["fit", "--config", str(sim_dir / "fit.ini"), "--out", str(out)]) == 0
    return out


def test_simulate_outputs(sim_dir):
    assert {"data.csv", "truth.json", "fit.ini"} <= {p.name for p in sim_dir.iterdir()}


def test_fit_artifacts_and_determinism(sim_dir, fit_dir, capsys):
    names = {p.name for p in fit_dir.iterdir()}
    assert {"chain0.csv", "chain1.csv", "chain0.meta.json", "report.txt", "dic.csv"} <= names
    report = (fit_dir / "report.txt").read_text()
    assert "theta: posterior median" in report and "validation: passed" in report
    other = sim_dir / "fit-b"
    assert main(["fit", "--config", str(sim_dir / "fit.ini"), "--out", str(other)]) == 0
    for c in ("chain0.csv", "chain1.csv"):
        assert filecmp.cmp(fit_dir / c, other / c, shallow=False)
    header, rows = read_table(fit_dir / "dic.csv")
    assert header == ["model", "dic", "d_bar", "p_d"]
    assert rows[0][1] == pytest.approx(rows[0][2] + rows[0][3])


def test_bad_knot_is_config_error_before_sampling(sim_dir, capsys):
    cfg = sim_dir / "bad.ini"
    cfg.write_text((sim_dir / "fit.ini").read_text()
                   .replace("variant = jump-quadratic", "variant = knot\nknot = 30"))
    out = sim_dir / "bad-out"
    assert main(["fit", "--config", str(cfg), "--out", str(out)]) == 2
    assert "knot time 30" in capsys.readouterr().err
    assert not out.exists()


def test_missing_config_file(tmp_path, capsys):
    assert main(["fit", "--config", str(tmp_path / "nope.ini")]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_summarize_outputs(sim_dir, fit_dir):
    out = fit_dir / "summary"
    assert main(["summarize", "--fit", str(fit_dir), "--config", str(sim_dir / "fit.ini"),
                 "--times", "-4", "5", "15", "--out", str(out)]) == 0
    h, rows = read_table(out / "predictive_curves.csv")
    assert h == ["z", "t", "s", "q05", "q50", "q95"]
    assert all(r[3] <= r[4] <= r[5] for r in rows)
    a = (out / "predictive" / "z0_t-4.csv").read_text().splitlines()
    b = (out / "predictive" / "z1_t-4.csv").read_text().splitlines()
    assert a[0] == b[0]
    assert [l.split(",", 1)[1] for l in a[1:]] == [l.split(",", 1)[1] for l in b[1:]]
    assert a[1:] != b[1:]
    h, rows = read_table(out / "mode_trajectory.csv")
    assert h == ["z", "t", "s_med", "s_lo", "s_hi", "h_med", "h_lo", "h_hi"]
    for z in (0.0, 1.0):
        t = [r[1] for r in rows if r[0] == z]
        assert t == sorted(t)
    assert all(r[3] <= r[2] <= r[4] and r[6] <= r[5] <= r[7] for r in rows)
    h, rows = read_table(out / "trend_components.csv")
    assert {r[2] for r in rows} == {"jump", "linear", "quadratic"}
    assert read_table(out / "variance_curve.csv")[0] == ["s", "sigma_sq_med", "lo", "hi"]
    assert read_table(out / "residuals_by_time.csv")[0] == ["i", "s", "t", "e_bar"]


def test_summarize_rejects_mismatched_config(sim_dir, fit_dir, capsys):
    cfg = sim_dir / "other.ini"
    cfg.write_text((sim_dir / "fit.ini").read_text()
                   .replace("variant = jump-quadratic", "variant = quadratic"))
    assert main(["summarize", "--fit", str(fit_dir), "--config", str(cfg)]) == 2
    assert "hash mismatch" in capsys.readouterr().err


def test_dic_and_diagnose(fit_dir, capsys):
    assert main(["dic", "--fit", str(fit_dir), "--out", str(fit_dir / "dic2.csv")]) == 0
    assert read_table(fit_dir / "dic.csv") == read_table(fit_dir / "dic2.csv")
    assert main(["diagnose", "--fit", str(fit_dir)]) == 0
    diag = fit_dir / "diagnostics"
    assert read_table(diag / "residual_profiles.csv")[0] == ["s", "i", "t", "e_bar"]
    assert "split R-hat theta" in (diag / "diagnostics.txt").read_text()


def test_sweep_table(sim_dir):
    out = sim_dir / "sweep"
    cfg = sim_dir / "short.ini"
    cfg.write_text((sim_dir / "fit.ini").read_text().replace("iterations = 60", "iterations = 25")
                   .replace("burn_in = 20", "burn_in = 5").replace("chains = 2", "chains = 1"))
    assert main(["fit", "--config", str(cfg), "--out", str(out), "--sweep"]) == 0
    h, rows = read_table(out / "dic_comparison.csv")
    assert h == ["model", "dic", "d_bar", "p_d"]
    assert [r[0] for r in rows] == ["Quadratic", "Knot 8", "Knot 10", "Knot 12",
                                    "Jump Quadratic", "Jump Knot 8", "Jump Knot 10",
                                    "Jump Knot 12"]


def test_unknown_variant_flag():
    with pytest.raises(SystemExit):
        main(["fit", "--config", "x.ini", "--variant", "cubic"])


def test_split_rhat():
    rng = np.random.default_rng(0)
    x = rng.normal(size=2000)
    idx = np.repeat([0, 1], 1000)
    assert abs(split_rhat(x, idx) - 1) < 0.02
    x[1000:] += 3
    assert split_rhat(x, idx) > 1.5
