import json

import numpy as np
import pytest

from logltn import cli
from logltn.errors import NonFiniteLossError


def run(capsys, *argv):
    code = cli.main(list(argv))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


@pytest.fixture
def kb_file(tmp_path):
    p = tmp_path / "small.kb"
    p.write_text("all_p: forall x P(x);\nlink: forall x (P(x) -> exists y Q(x, y));\n")
    return p


def test_check_reports_nnf_and_symbols(capsys, kb_file):
    code, out, _ = run(capsys, "check", str(kb_file))
    assert code == 0
    assert "all_p: forall (x) (P(x))" in out
    assert "nnf: forall (x) (not P(x) or (exists (y) (Q(x, y))))" in out
    assert "predicates: P, Q" in out


def test_check_rejects_unbound_variable(capsys, tmp_path):
    p = tmp_path / "bad.kb"
    p.write_text("forall x P(x, w);")
    code, _, err = run(capsys, "check", str(p))
    assert code == 1 and "unbound variable 'w'" in err


def test_check_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "check", str(tmp_path / "none.kb"))
    assert code == 1 and err.startswith("error:")


def test_check_warns_on_space_mixing(capsys, tmp_path):
    p = tmp_path / "mix.kb"
    p.write_text("(forall u P(u)) or (forall v Q(v));")
    code, _, err = run(capsys, "check", str(p), "--semantics", "prodrl")
    assert code == 0 and "warning" in err
    code, out, err = run(capsys, "check", str(p), "--semantics", "logltn")
    assert code == 0 and "warning" not in err and "log truth degree" in out


def train_args(out, *extra):
    return ("train", "--task", "clustering", "--semantics", "logltn", "--seed", "1",
            "--steps", "5", "--out", str(out), *extra)


def test_train_writes_outputs(capsys, tmp_path):
    code, out, _ = run(capsys, *train_args(tmp_path / "a", "--save-model", "--dump-data"))
    assert code == 0
    d = tmp_path / "a"
    for name in ("run.csv", "metrics.txt", "manifest.json", "model.npz", "data.csv"):
        assert (d / name).exists(), name
    rows = (d / "run.csv").read_text().splitlines()
    assert rows[0].startswith("step,loss,sat,alpha,p,sat_") and len(rows) == 6
    metrics = dict(l.split("=", 1) for l in (d / "metrics.txt").read_text().splitlines())
    assert {"ari", "final_loss", "final_sat", "steps", "seed"} <= set(metrics)
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["config"]["train"]["steps"] == 5
    assert manifest["argv"][:3] == ["train", "--task", "clustering"]


def test_train_is_deterministic(capsys, tmp_path):
    for name in ("a", "b"):
        assert run(capsys, *train_args(tmp_path / name))[0] == 0
    for f in ("run.csv", "metrics.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_train_repeats_use_consecutive_seeds(capsys, tmp_path):
    code, _, _ = run(capsys, *train_args(tmp_path / "r", "--repeats", "2"))
    assert code == 0
    assert json.loads((tmp_path / "r" / "seed2" / "manifest.json").read_text())["seed"] == 2


def test_config_precedence(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"steps": 3, "learning_rate": 0.01},
                               "semantics": {"alpha": {"start": 2, "end": 2}}}))
    code, _, _ = run(capsys, *train_args(tmp_path / "o", "--config", str(cfg)))
    assert code == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["config"]["train"]["steps"] == 5  # flag beats file
    assert manifest["config"]["train"]["learning_rate"] == 0.01  # file beats default
    assert (tmp_path / "o" / "run.csv").read_text().splitlines()[1].split(",")[3] == "2"


def test_out_env_variable(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    code, _, _ = run(capsys, "train", "--task", "clustering", "--semantics", "logltn-max",
                     "--seed", "0", "--steps", "2")
    assert code == 0
    assert (tmp_path / "env" / "clustering-logltn-max" / "seed0" / "run.csv").exists()


def test_invalid_config_exit_1(capsys, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert run(capsys, *train_args(tmp_path / "o", "--config", str(cfg)))[0] == 1
    assert run(capsys, *train_args(tmp_path / "o", "--lr", "-1"))[0] == 1


def test_nonfinite_loss_exit_2(capsys, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NonFiniteLossError(0, "phi0", float("nan"))

    monkeypatch.setattr(cli, "train", boom)
    code, _, err = run(capsys, *train_args(tmp_path / "o"))
    assert code == 2 and "phi0" in err


def test_kbfile_task(capsys, tmp_path):
    kb = tmp_path / "k.kb"
    kb.write_text("forall x P(x);\nforall x (Q(x) -> P(x));\n")
    data = tmp_path / "d.npz"
    np.savez(data, **{"var.x": np.random.default_rng(0).standard_normal((6, 3))})
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": {"predicates": {"P": {}, "Q": {"hidden": [4]}}}}))
    code, _, err = run(capsys, "train", "--task", "kbfile", "--kb", str(kb), "--data", str(data),
                       "--config", str(cfg), "--steps", "3", "--out", str(tmp_path / "o"))
    assert code == 0, err
    assert (tmp_path / "o" / "run.csv").read_text().count("\n") == 4


def test_analyze_outputs(capsys, tmp_path):
    code, out, _ = run(capsys, "analyze", "stability", "--out", str(tmp_path))
    assert code == 0 and out.startswith("x,naive_value")
    assert (tmp_path / "stability.csv").exists()
    code, out, _ = run(capsys, "analyze", "demorgan", "--n", "2", "--points-per-axis", "500",
                       "--out", str(tmp_path))
    assert code == 0 and "x_star=0.500000" in out
    assert (tmp_path / "demorgan_grid.csv").exists()
    code, out, _ = run(capsys, "analyze", "lme-bounds", "--trials", "200")
    assert code == 0 and "upper_violations=0" in out


@pytest.mark.parametrize("task", ["clustering", "digitadd"])
def test_gradcheck_passes(capsys, task):
    code, out, _ = run(capsys, "gradcheck", "--task", task, "--semantics", "logltn")
    assert code == 0 and out.startswith("max_relative_error=")
