import csv
import json
import math
import subprocess
import sys

import numpy as np

from cellmggmm import cli
from cellmggmm.gaussian import FactorizationError


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def toy_csv(path, seed=0, interleave=False):
    rng = np.random.default_rng(seed)
    rows = [(1, *rng.standard_normal(3)) for _ in range(12)] + [(2, *(rng.standard_normal(3) + 4)) for _ in range(10)]
    if interleave:
        rows = rows[::2] + rows[1::2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group", "x", "y", "z"])
        w.writerows(rows)
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_fit_toy(tmp_path):
    data = toy_csv(tmp_path / "d.csv")
    out = tmp_path / "out"
    assert cli.main(["fit", "--data", data, "--out-dir", str(out)]) == 0
    for name in ("model.json", "mask.csv", "responsibilities.csv", "residuals.csv", "summary.json"):
        assert (out / name).exists()
    rows = read_rows(out / "mask.csv")
    assert rows[0] == ["group", "i", "x", "y", "z"]
    M = np.array([[int(v) for v in r] for r in rows[1:]])
    for g, n in ((1, 12), (2, 10)):
        assert np.all(M[M[:, 0] == g, 2:].sum(axis=0) >= math.ceil(0.75 * n))
    summary = json.loads((out / "summary.json").read_text())
    assert summary["converged"] is True
    assert len(summary["objective_trace"]) == 1 + 2 * summary["iterations"]
    raw = (out / "mask.csv").read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")


def test_fit_preserves_row_order(tmp_path):
    data = toy_csv(tmp_path / "d.csv", interleave=True)
    out = tmp_path / "out"
    assert cli.main(["fit", "--data", data, "--out-dir", str(out)]) == 0
    src = read_rows(data)[1:]
    for name in ("mask.csv", "responsibilities.csv", "residuals.csv"):
        rows = read_rows(out / name)[1:]
        assert [r[0] for r in rows] == [r[0] for r in src]
    idx = [(r[0], r[1]) for r in read_rows(out / "mask.csv")[1:]]
    assert idx[:3] == [("1", "1"), ("1", "2"), ("1", "3")]


def test_fit_non_numeric_cell(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("group,a,b\n1,1.0,2.0\n1,oops,3.0\n1,0.5,0.1\n")
    assert cli.main(["fit", "--data", str(path), "--out-dir", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line 3" in err and "'a'" in err


def test_fit_bad_alpha(tmp_path, capsys):
    data = toy_csv(tmp_path / "d.csv")
    cfg = write_json(tmp_path / "c.json", {"alpha": 0.4})
    assert cli.main(["fit", "--data", data, "--config", cfg, "--out-dir", str(tmp_path / "o")]) == 2
    assert "alpha below 0.5" in capsys.readouterr().err


def test_fit_unknown_config_key(tmp_path):
    data = toy_csv(tmp_path / "d.csv")
    cfg = write_json(tmp_path / "c.json", {"alpah": 0.7})
    assert cli.main(["fit", "--data", data, "--config", cfg, "--out-dir", str(tmp_path / "o")]) == 2


def test_fit_missing_group_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,4\n")
    assert cli.main(["fit", "--data", str(path), "--out-dir", str(tmp_path / "o")]) == 2


def test_fit_missing_file(tmp_path):
    assert cli.main(["fit", "--data", str(tmp_path / "none.csv"), "--out-dir", str(tmp_path / "o")]) == 1


def test_fit_numerical_failure(tmp_path, monkeypatch):
    def boom(data, cfg):
        raise FactorizationError(np.ones(3, bool), "iteration 4")

    monkeypatch.setattr(cli, "fit", boom)
    data = toy_csv(tmp_path / "d.csv")
    assert cli.main(["fit", "--data", data, "--out-dir", str(tmp_path / "o")]) == 3


def test_model_round_trip(tmp_path):
    data = toy_csv(tmp_path / "d.csv")
    out = tmp_path / "out"
    cli.main(["fit", "--data", data, "--out-dir", str(out)])
    gd, _ = cli.read_data(data)
    res = cli.fit(gd, cli.estimator_config(None))
    params, std = cli.load_model(out / "model.json")
    for name in ("pi", "mu", "sigma", "sigma_reg"):
        assert getattr(params, name).tobytes() == getattr(res.params, name).tobytes()
    for name in ("target", "rho", "kappa"):
        assert getattr(params.reg, name).tobytes() == getattr(res.params.reg, name).tobytes()
    assert std.scale.tobytes() == res.standardization.scale.tobytes()


SCENARIO_1 = {"N": 2, "p": 10, "n_g": 100, "pi_diag": 0.9, "eps_cell": 0.1, "gamma_cell": 6, "seed": 1}


def test_simulate_scenario(tmp_path):
    cfg = write_json(tmp_path / "s.json", SCENARIO_1)
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", cfg, "--out-dir", str(out)]) == 0
    mask = cli.read_mask(out / "contamination_mask.csv")
    for m in mask.masks:
        np.testing.assert_array_equal((~m).sum(axis=0), 10)
    truth = json.loads((out / "truth.json").read_text())
    assert set(truth) >= {"pi", "mu", "sigma", "labels"}
    assert all(min(lab) >= 1 for lab in truth["labels"])
    data, _ = cli.read_data(out / "data.csv")
    assert data.sizes == (100, 100)


def test_simulate_clean(tmp_path):
    cfg = write_json(tmp_path / "s.json", {**SCENARIO_1, "eps_cell": 0.0})
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", cfg, "--out-dir", str(out)]) == 0
    assert cli.read_mask(out / "contamination_mask.csv").n_flagged() == 0


def test_simulate_invalid(tmp_path):
    cfg = write_json(tmp_path / "s.json", {**SCENARIO_1, "eps_cell": 1.5})
    assert cli.main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == 2
    cfg = write_json(tmp_path / "s2.json", {**SCENARIO_1, "n_g": [10, 10, 10]})
    assert cli.main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == 2


def test_simulate_seed_flag_overrides(tmp_path):
    cfg = write_json(tmp_path / "s.json", SCENARIO_1)
    cli.main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "a"), "--seed", "1"])
    cli.main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "data.csv").read_bytes() != (tmp_path / "b" / "data.csv").read_bytes()
    cli.main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "c")])
    assert (tmp_path / "a" / "data.csv").read_bytes() == (tmp_path / "c" / "data.csv").read_bytes()


def _truth_as_model(tmp_path, sim):
    truth = json.loads((sim / "truth.json").read_text())
    N, p = np.array(truth["mu"]).shape
    model = {
        "pi": truth["pi"], "mu": truth["mu"], "sigma": truth["sigma"], "sigma_reg": truth["sigma"],
        "rho": [1e-6] * N, "T": [np.eye(p).tolist()] * N, "kappa": [100.0] * N,
    }
    return write_json(tmp_path / "model.json", model)


def test_evaluate_truth_against_itself(tmp_path):
    cfg = write_json(tmp_path / "s.json", SCENARIO_1)
    sim = tmp_path / "sim"
    cli.main(["simulate", "--config", cfg, "--out-dir", str(sim)])
    model = _truth_as_model(tmp_path, sim)
    mask = str(sim / "contamination_mask.csv")
    assert cli.main(["evaluate", "--model", model, "--truth", str(sim / "truth.json"),
                     "--mask", mask, "--truth-mask", mask, "--out-dir", str(tmp_path / "ev")]) == 0
    m = json.loads((tmp_path / "ev" / "metrics.json").read_text())
    assert m["mse_mu"] == 0 and m["mse_pi"] == 0
    assert abs(m["kl_mean"]) < 1e-10
    assert (m["precision"], m["recall"], m["f1"]) == (1.0, 1.0, 1.0)


def test_evaluate_fit_schema(tmp_path):
    cfg = write_json(tmp_path / "s.json", SCENARIO_1)
    sim, fitdir, ev = tmp_path / "sim", tmp_path / "fit", tmp_path / "ev"
    cli.main(["simulate", "--config", cfg, "--out-dir", str(sim)])
    assert cli.main(["fit", "--data", str(sim / "data.csv"), "--out-dir", str(fitdir)]) == 0
    assert cli.main(["evaluate", "--model", str(fitdir / "model.json"), "--truth", str(sim / "truth.json"),
                     "--mask", str(fitdir / "mask.csv"), "--truth-mask", str(sim / "contamination_mask.csv"),
                     "--out-dir", str(ev)]) == 0
    m = json.loads((ev / "metrics.json").read_text())
    assert set(m) == {"kl_mean", "kl", "mse_mu", "mse_pi", "precision", "recall", "f1"}
    assert len(m["kl"]) == 2
    for key in ("kl_mean", "mse_mu", "mse_pi", "precision", "recall", "f1"):
        assert isinstance(m[key], float) and m[key] >= 0
    assert 0 <= m["f1"] <= 1


def test_evaluate_errors(tmp_path):
    cfg = write_json(tmp_path / "s.json", SCENARIO_1)
    sim = tmp_path / "sim"
    cli.main(["simulate", "--config", cfg, "--out-dir", str(sim)])
    model = _truth_as_model(tmp_path, sim)
    assert cli.main(["evaluate", "--model", model, "--truth", str(tmp_path / "nope.json"),
                     "--out-dir", str(tmp_path / "ev")]) == 1
    small = write_json(tmp_path / "s3.json", {**SCENARIO_1, "N": 3, "n_g": 20})
    cli.main(["simulate", "--config", small, "--out-dir", str(tmp_path / "sim3")])
    assert cli.main(["evaluate", "--model", model, "--truth", str(tmp_path / "sim3" / "truth.json"),
                     "--out-dir", str(tmp_path / "ev")]) == 2


def test_sweep(tmp_path):
    data = toy_csv(tmp_path / "d.csv")
    out = tmp_path / "sw"
    assert cli.main(["sweep", "--data", data, "--alphas", "1.0,0.75,0.5", "--out-dir", str(out)]) == 0
    for a in ("1.0", "0.75", "0.5"):
        assert (out / f"alpha_{a}" / "model.json").exists()
        assert (out / f"alpha_{a}" / "mask.csv").exists()
    t_rows = read_rows(out / "responsibilities_long.csv")
    assert t_rows[0] == ["alpha", "group", "i", "k", "t"]
    own = [r for r in t_rows[1:] if float(r[0]) == 1.0 and r[1] == r[3]]
    assert len(own) == 22 and all(float(r[4]) == 1.0 for r in own)
    r_rows = read_rows(out / "residuals_long.csv")
    assert r_rows[0] == ["alpha", "group", "i", "j", "residual"]
    assert len(r_rows) == 1 + 3 * 22 * 3


def test_sweep_bad_alphas(tmp_path):
    data = toy_csv(tmp_path / "d.csv")
    assert cli.main(["sweep", "--data", data, "--alphas", "", "--out-dir", str(tmp_path / "o")]) == 2
    assert cli.main(["sweep", "--data", data, "--alphas", "0.4,1", "--out-dir", str(tmp_path / "o")]) == 2


def test_console_entry_point(tmp_path):
    data = toy_csv(tmp_path / "d.csv")
    proc = subprocess.run([sys.executable, "-m", "cellmggmm", "fit", "--data", data, "--out-dir", str(tmp_path / "o")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
