import json

import pytest

from graph2sfiles import config as rc
from graph2sfiles.cli import main
from graph2sfiles.encoder import ConfigError
from graph2sfiles.model import CHECKPOINT_FILE

from conftest import DISTILLATION


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, ckpt = root / "data", root / "ckpt"
    assert main(["gen-data", "--n", "30", "--seed", "7", "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--out", str(ckpt), "--epochs", "1", "--seed", "2",
                 "--enc-layers", "1", "--dec-layers", "1", "--batch-size", "8", "--quiet"]) == 0
    return data, ckpt


# ---------------------------------------------------------------- utilities

def test_canonicalize_echoes_canonical_listing(capsys, tmp_path):
    f = tmp_path / "in.txt"
    f.write_text(DISTILLATION + "\n(raw)(hex){1}(prod)n|(raw)(hex){1}(dist)[{tout}(prod)]{bout}(prod)\n")
    code, out, _ = run(capsys, "canonicalize", str(f))
    assert code == 0 and out.splitlines() == [DISTILLATION, DISTILLATION]


def test_canonicalize_reports_bad_lines(capsys, tmp_path):
    f = tmp_path / "in.txt"
    f.write_text("(raw)(prod)\n(raw)[(prod)\n")
    code, out, err = run(capsys, "canonicalize", str(f))
    assert code == 2
    assert out.splitlines() == ["(raw)(prod)", ""]
    assert "line 2" in err


def test_to_graph(capsys, tmp_path):
    f = tmp_path / "in.txt"
    f.write_text("(raw)(prod)\n?\n")
    code, out, _ = run(capsys, "to-graph", str(f))
    lines = out.splitlines()
    assert code == 2 and lines[1] == "null"
    g = json.loads(lines[0])
    assert len(g["nodes"]) == 2 and len(g["edges"]) == 1


def test_usage_errors(capsys):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "canonicalize", "--bogus")[0] == 1
    assert run(capsys)[0] == 1
    code, out, _ = run(capsys, "--help")
    assert code == 0 and "gen-data" in out


def test_runtime_error_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "predict", "--checkpoint", str(tmp_path / "missing"))
    assert code == 2 and err.startswith("error:")


# ---------------------------------------------------------------- pipeline

def test_gen_data_is_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "gen-data", "--n", "10", "--seed", "7", "--out", str(tmp_path / name))[0] == 0
    for f in ("train.tsv", "val.tsv", "test.tsv", rc.RUN_CONFIG_FILE):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    lines = (tmp_path / "a" / "train.tsv").read_text().splitlines()
    assert len(lines) == 8 and all(len(line.split("\t")) == 2 for line in lines)


def test_train_writes_outputs(trained):
    _, ckpt = trained
    for f in (CHECKPOINT_FILE, "history.jsonl", rc.RUN_CONFIG_FILE, "vocab.txt"):
        assert (ckpt / f).exists()
    cfg = json.loads((ckpt / rc.RUN_CONFIG_FILE).read_text())
    assert cfg["encoder"]["layers"] == 1 and cfg["train"]["seed"] == 2
    assert len((ckpt / "history.jsonl").read_text().splitlines()) == 1


def test_predict_emits_ranked_lines(trained, capsys, tmp_path):
    data, ckpt = trained
    pfd = (data / "test.tsv").read_text().splitlines()[0].split("\t")[0]
    f = tmp_path / "pfd.txt"
    f.write_text(pfd + "\n")
    code, out, _ = run(capsys, "predict", "--checkpoint", str(ckpt), "--beams", "5", "--max-len", "20", str(f))
    rows = [line.split("\t") for line in out.splitlines()]
    assert code == 0 and [r[0] for r in rows] == ["1", "2", "3", "4", "5"]
    scores = [float(r[1]) for r in rows]
    assert scores == sorted(scores, reverse=True)


def test_eval_writes_report(trained, capsys, tmp_path):
    data, ckpt = trained
    out_dir = tmp_path / "ev"
    code, out, _ = run(capsys, "eval", "--checkpoint", str(ckpt), "--data", str(data), "--beams", "2",
                       "--max-len", "20", "--out", str(out_dir))
    assert code == 0
    summary = json.loads(out)
    assert summary["k"] == 2 and summary["n"] == 3
    assert json.loads((out_dir / "report.json").read_text()) == summary
    assert len((out_dir / "samples.jsonl").read_text().splitlines()) == 3
    saved = json.loads((out_dir / rc.RUN_CONFIG_FILE).read_text())
    assert saved["decode"]["k"] == 2


def test_retrain_from_saved_config_is_bitwise(trained, tmp_path):
    data, ckpt = trained
    again = tmp_path / "again"
    assert main(["train", "--config", str(ckpt / rc.RUN_CONFIG_FILE), "--data", str(data), "--out", str(again),
                 "--quiet"]) == 0
    assert (again / CHECKPOINT_FILE).read_bytes() == (ckpt / CHECKPOINT_FILE).read_bytes()
    strip = [{k: v for k, v in json.loads(line).items() if k != "seconds"}
             for line in (again / "history.jsonl").read_text().splitlines()]
    first = [{k: v for k, v in json.loads(line).items() if k != "seconds"}
             for line in (ckpt / "history.jsonl").read_text().splitlines()]
    assert strip == first


def test_grid(trained, capsys, tmp_path):
    data, _ = trained
    code, out, _ = run(capsys, "grid", "--data", str(data), "--out", str(tmp_path / "g"), "--epochs", "1",
                       "--batch-sizes", "8", "--lrs", "1e-3", "2e-3", "--enc-layers", "1", "--dec-layers", "1")
    assert code == 0
    rows = [json.loads(line) for line in (tmp_path / "g" / "grid.jsonl").read_text().splitlines()]
    assert len(rows) == 2
    best = json.loads(out)
    assert best["best_val_loss"] == min(r["best_val_loss"] for r in rows)


# ---------------------------------------------------------------- config

def test_resolve_precedence(tmp_path):
    f = tmp_path / "c.json"
    f.write_text(json.dumps({"encoder": {"arch": "gatv2", "layers": 3}, "train": {"epochs": 7}}))
    cfg = rc.resolve(f, {"train.epochs": 9, "train.seed": None})
    assert (cfg.encoder.arch, cfg.encoder.layers, cfg.train.epochs, cfg.train.seed) == ("gatv2", 3, 9, 0)
    assert rc.resolve(f, {"encoder.arch": "graphconv"}).encoder.arch == "graphconv"


def test_presets():
    desk, full = rc.preset("desk"), rc.preset("full", "gatv2")
    assert desk.encoder.d_enc == 64 and full.encoder.d_enc == 128
    assert full.train.batch_size == 128 and full.encoder.layers == 4
    with pytest.raises(ConfigError):
        rc.preset("huge")


@pytest.mark.parametrize("overrides", [
    {"train.nope": 1}, {"bogus.x": 1}, {"train.epochs": "ten"}, {"train.keep_best": 1},
    {"data.variant": "x"}, {"data.fractions": [0.5, 0.5, 0.5]}, {"train.learning_rate": -1.0},
])
def test_bad_overrides(overrides):
    with pytest.raises((ConfigError, ValueError)):
        rc.resolve(None, overrides)


def test_round_trip_json(tmp_path):
    cfg = rc.resolve(None, {"encoder": {"layers": 2}, "decode.k": 3})
    path = cfg.save(tmp_path)
    assert rc.resolve(path).to_dict() == cfg.to_dict()
    (tmp_path / "bad.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        rc.load(tmp_path / "bad.json")
