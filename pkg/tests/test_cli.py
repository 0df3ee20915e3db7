import json
import subprocess
import sys

import pytest

from qbwnn import cli, config
from qbwnn.errors import ConfigError

SMALL_TRAIN = ["train", "--d1", "32", "--d2", "16", "--epochs", "2", "--data-m", "40"]


def _run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


# ------------------------------------------------------------ config layer

def test_empty_config_gives_defaults():
    cfg = config.parse_config({}, {"command": "train"})
    assert cfg.lr == 0.1 and cfg.epochs == 10 and cfg.batch_size == 32
    assert cfg.mode == "quasi" and cfg.optimizer == "sgd" and cfg.seed == 0


def test_flag_overrides_file():
    cfg = config.parse_config({"lr": 0.1}, {"command": "train", "lr": "0.01"})
    assert cfg.lr == 0.01
    cfg = config.parse_config({"lr": 0.1}, {"command": "train", "lr": None})
    assert cfg.lr == 0.1


@pytest.mark.parametrize("values,key", [
    ({"lr": -1}, "lr"),
    ({"lr": "fast"}, "lr"),
    ({"epochs": 2.5}, "epochs"),
    ({"seed": True}, "seed"),
    ({"learning_rate": 0.1}, "learning_rate"),
    ({"mode": "fuzzy"}, "mode"),
    ({"kmax": 65}, "kmax"),
])
def test_bad_config_names_key(values, key):
    with pytest.raises(ConfigError) as info:
        config.parse_config(dict(values, command="train"))
    assert info.value.key == key


def test_config_file_must_be_object(tmp_path):
    (tmp_path / "c.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        config.read_config_file(tmp_path / "c.json")


# --------------------------------------------------------------- exit codes

def test_gradcheck_exit_zero(capsys):
    code, out, _ = _run(["gradcheck", "--seed", "0"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["passed"] and rep["results"]["max_relative_error"] < 1e-6


def test_report_provenance(capsys):
    code, out, _ = _run(["gradcheck"], capsys)
    rep = json.loads(out)
    for key in ("config", "seed", "code_version", "rng_version", "backend", "checks"):
        assert key in rep
    assert rep["config"]["command"] == "gradcheck"
    assert rep["config"]["d"] == 3
    assert out == json.dumps(rep, sort_keys=True, indent=2) + "\n"


def test_config_file_then_flag(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"lr": 0.1, "seed": 4}))
    code, out, _ = _run(SMALL_TRAIN + ["--config", str(tmp_path / "c.json"), "--lr", "0.01"], capsys)
    rep = json.loads(out)
    assert rep["config"]["lr"] == 0.01 and rep["config"]["seed"] == 4


def test_bad_lr_exit_two(capsys):
    code, _, err = _run(["train", "--lr", "-1"], capsys)
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["key"] == "lr"


def test_unknown_flag_exit_two(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["train", "--bogus", "1"])
    assert info.value.code == 2


def test_unknown_file_key_exit_two(tmp_path, capsys):
    (tmp_path / "c.json").write_text(json.dumps({"bogus": 1}))
    code, _, err = _run(["gradcheck", "--config", str(tmp_path / "c.json")], capsys)
    assert code == 2 and "bogus" in err


def test_missing_data_exit_three(tmp_path, capsys):
    code, _, err = _run(SMALL_TRAIN + ["--data-in", str(tmp_path / "nope.csv")], capsys)
    assert code == 3
    assert json.loads(err.strip())["error"] == "data"


def test_malformed_csv_exit_three(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("f0,f1,label\n1,0,a\n0,0,b\n")
    code, _, err = _run(SMALL_TRAIN + ["--data-in", str(tmp_path / "d.csv")], capsys)
    assert code == 3 and "row 2" in err


def test_threshold_failure_exit_one(capsys):
    # a huge real-mode step blows the loss up; the run reports it and exits 1
    code, out, _ = _run(SMALL_TRAIN + ["--mode", "real", "--lr", "1e6", "--weight-decay", "0"],
                        capsys)
    rep = json.loads(out)
    assert code == 1 and not rep["passed"] and rep["failures"]


def test_train_on_csv(tmp_path, capsys):
    rows = ["f0,f1,f2,label"]
    for i in range(40):
        s = 1 if i % 2 else -1
        rows.append(f"{s},{0.1 * (i % 7)},{0.05 * i},{'p' if s > 0 else 'n'}")
    (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
    code, out, _ = _run(SMALL_TRAIN + ["--data-in", str(tmp_path / "d.csv"),
                                       "--csv", str(tmp_path / "drift.csv")], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["results"]["data_dim"] == 3
    assert (tmp_path / "drift.csv").read_text().startswith("step")


# ------------------------------------------------------------- commands

def test_spectrum_rgauss_rows(tmp_path, capsys):
    csv = tmp_path / "s.csv"
    code, out, _ = _run(["spectrum", "--kernel", "rgauss", "--dim", "3", "--xi", "2",
                         "--kmax", "40", "--csv", str(csv)], capsys)
    assert code == 0
    lines = csv.read_text().splitlines()
    assert lines[0] == "k,N_dk,u_k,parity" and len(lines) == 42
    fit = json.loads((tmp_path / "s.csv.fit.json").read_text())
    assert fit["fit"]["exponential"]["r2"] > 0.99


def test_verify_quasi_fields(capsys):
    code, out, _ = _run(["verify-quasi", "--width", "400", "--samples", "500", "--probes", "8"],
                        capsys)
    rep = json.loads(out)
    for key in ("ks_pass_fraction", "ks_max", "pearson_r_limit", "pearson_r_exact"):
        assert key in rep["results"]
    assert {c["name"] for c in rep["checks"]} == {"ks_pass_fraction", "pearson_r_limit"}
    assert code == (0 if rep["passed"] else 1)


def test_verify_quasi_too_small_exit_two(capsys):
    code, _, err = _run(["verify-quasi", "--width", "50"], capsys)
    assert code == 2 and "width" in err


def test_ntk_empirical(capsys):
    code, out, _ = _run(["ntk", "--ntk-kind", "empirical", "--d1", "256", "--d2", "256",
                         "--probes", "6"], capsys)
    res = json.loads(out)["results"]
    assert code == 0 and res["relative_frobenius_to_analytic"] < 0.5
    assert len(res["gram"]) == 6


def test_replay_identical(tmp_path, capsys):
    rep = tmp_path / "r.json"
    code, _, _ = _run(SMALL_TRAIN + ["--report", str(rep)], capsys)
    assert code == 0
    code, out, _ = _run(["replay", str(rep)], capsys)
    assert code == 0 and json.loads(out)["replay_identical"] is True


def test_replay_detects_tampering(tmp_path, capsys):
    rep = tmp_path / "r.json"
    _run(["gradcheck", "--report", str(rep)], capsys)
    data = json.loads(rep.read_text())
    data["results"]["max_relative_error"] = 1.0
    rep.write_text(json.dumps(data))
    code, out, _ = _run(["replay", str(rep)], capsys)
    assert code == 1 and json.loads(out)["replay_identical"] is False


def test_replay_bad_report_exit_three(tmp_path, capsys):
    (tmp_path / "r.json").write_text("not json")
    code, _, _ = _run(["replay", str(tmp_path / "r.json")], capsys)
    assert code == 3


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "qbwnn", "gradcheck"], capture_output=True,
                          text=True, timeout=300)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "gradcheck"
