import csv
import hashlib
import json

import numpy as np
import pytest

from conftest import TINY_CONFIG
from distcl.cli import main
from distcl.config import ConfigError, load_config
from distcl.milp import import_lp
from distcl.nn import init_network, load_network
from distcl.vpp.data import FEATURES
from distcl.vpp.instance import build_instance, vpp_params
from distcl.vpp.model import build_vpp_model


def write_config(tmp_path, **changes):
    cfg = json.loads(json.dumps(TINY_CONFIG))
    for key, value in changes.items():
        section, _, field = key.partition("__")
        if field:
            cfg.setdefault(section, {})[field] = value
        elif value is None:
            cfg.pop(section, None)
        else:
            cfg[section] = value
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_gen_schema_and_determinism(tiny_config_path, tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["gen", "--config", str(tiny_config_path), "--out", str(tmp_path / name)]) == 0
    out = capsys.readouterr().out
    schema = next(ln for ln in out.splitlines() if ln.startswith("schema: "))
    assert len(schema[len("schema: "):].split(",")) == 17
    for f in ("dataset.csv", "dataset.json", "context.csv", "scenarios.csv", "shocks.csv"):
        assert digest(tmp_path / "a" / f) == digest(tmp_path / "b" / f)


def test_seed_override_changes_data(tiny_config_path, tmp_path):
    main(["gen", "--config", str(tiny_config_path), "--out", str(tmp_path / "a")])
    main(["gen", "--config", str(tiny_config_path), "--seed", "99", "--out", str(tmp_path / "b")])
    assert digest(tmp_path / "a" / "dataset.csv") != digest(tmp_path / "b" / "dataset.csv")


def test_train_outputs(tiny_config_path, tmp_path, capsys):
    assert main(["train", "--config", str(tiny_config_path), "--out", str(tmp_path)]) == 0
    net = load_network(tmp_path / "weights.txt")
    assert net.name == "DNN(1,4)"
    report = rows(tmp_path / "train_report.csv")
    assert report[0] == ["epoch", "train_loss", "val_loss"]
    assert len(report) - 1 == TINY_CONFIG["network"]["epochs"]
    assert "best_val_loss=" in capsys.readouterr().out


def test_train_from_dataset_and_weights_reuse(tiny_config_path, tmp_path):
    main(["gen", "--config", str(tiny_config_path), "--out", str(tmp_path / "gen")])
    main(["train", "--config", str(tiny_config_path), "--out", str(tmp_path / "train")])
    cfg = write_config(tmp_path, paths={"dataset": "gen/dataset.csv",
                                        "weights": "train/weights.txt"})
    assert main(["solve", "--config", str(cfg), "--mode", "heuristic_b",
                 "--out", str(tmp_path / "solve")]) == 0


def test_missing_dataset_path(tmp_path, capsys):
    cfg = write_config(tmp_path, paths={"dataset": "nowhere.csv"})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "nowhere.csv" in capsys.readouterr().err


def test_solve_outputs_and_dumps(tiny_config_path, tmp_path, capsys):
    lp, bounds = tmp_path / "m.lp", tmp_path / "b.csv"
    code = main(["solve", "--config", str(tiny_config_path), "--out", str(tmp_path / "o"),
                 "--dump-lp", str(lp), "--dump-bounds", str(bounds)])
    assert code == 0
    model = import_lp(lp.read_text())
    assert model.count_by_kind()["binary"] > 0
    assert rows(bounds)[0] == ["block", "layer", "node", "lower", "upper"]
    sol = rows(tmp_path / "o" / "solution.csv")
    assert sol[0] == ["variable", "value"] and len(sol) - 1 == model.n_vars
    prof = rows(tmp_path / "o" / "profits.csv")
    assert len(prof) - 1 == TINY_CONFIG["scenarios"]["count"]
    line = capsys.readouterr().out
    assert "status=optimal" in line and "hidden_relu_binaries=" in line and "violations=0" in line


def test_solve_deterministic_mode(tiny_config_path, tmp_path):
    assert main(["solve", "--config", str(tiny_config_path), "--mode", "deterministic_cl",
                 "--out", str(tmp_path), "--dump-lp", str(tmp_path / "m.lp")]) == 0
    assert import_lp((tmp_path / "m.lp").read_text()).n_vars > 0


def test_battery_config_rejected_before_solve(tmp_path, capsys):
    cfg = write_config(tmp_path, vpp={"hours": [8, 19], "b_max": 10.0, "b_init": 20.0})
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "initial charge" in capsys.readouterr().err
    assert not (tmp_path / "solution.csv").exists()


@pytest.mark.parametrize("changes,message", [
    (dict(seed=None), "seed"),
    (dict(seed="7"), "seed"),
    (dict(network__width=3), "network.'width'"),
    (dict(colour="red"), "'colour'"),
    (dict(solve__mode="magic"), "unknown mode"),
    (dict(vpp__context_box="huge"), "context_box"),
])
def test_config_errors_exit_2(tmp_path, capsys, changes, message):
    cfg = write_config(tmp_path, **changes)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert message in capsys.readouterr().err


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{seed: 1")
    assert main(["gen", "--config", str(path)]) == 2


def test_bundled_configs_load():
    desk = load_config("desk")
    assert desk.seed == 7 and desk.section("network")["neurons"] == 8
    full = load_config("full.json", seed=5)
    assert full.seed == 5 and len(full.section("vpp")["hours"]) == 24
    with pytest.raises(ConfigError):
        load_config("nonexistent")


def test_full_config_counts_480_hidden_binaries():
    """The bundled full-size instance, with elimination off, has 20 x 24 hidden ReLU binaries."""
    cfg = load_config("full")
    cfg.section("vpp")["eliminate_stable"] = False
    cfg.section("generator")["days"] = 8
    assert vpp_params(cfg).T == 24
    net = init_network(len(FEATURES), cfg.section("network")["hidden_layers"],
                       cfg.section("network")["neurons"], np.random.default_rng(0))
    net.input_names = list(FEATURES)
    vm = build_vpp_model(build_instance(cfg, net=net), "dcl")
    assert vm.hidden_relu_binaries == 480


def test_gradcheck(tiny_config_path, capsys):
    assert main(["gradcheck", "--config", str(tiny_config_path)]) == 0
    assert "PASS" in capsys.readouterr().out


def test_compare_table_and_reproducibility(tiny_config_path, tmp_path):
    for name in ("a", "b"):
        assert main(["compare", "--config", str(tiny_config_path),
                     "--out", str(tmp_path / name)]) == 0
    table = rows(tmp_path / "a" / "metrics.csv")
    assert table[0] == ["mode", "mean", "std", "var_0.1", "cvar_0.1", "bb_nodes"]
    assert [r[0] for r in table[1:]] == ["dcl", "heuristic_a", "heuristic_b", "deterministic_cl"]
    assert all(len(r) == 6 for r in table)
    for f in sorted((tmp_path / "a").glob("*.csv")):
        assert digest(f) == digest(tmp_path / "b" / f.name), f.name
    prof = rows(tmp_path / "a" / "profits.csv")
    assert prof[0] == ["omega", "profit_dcl", "profit_heuristic_a", "profit_heuristic_b",
                       "profit_deterministic_cl"]
