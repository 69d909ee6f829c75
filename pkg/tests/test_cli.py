import hashlib
import json
import re
from pathlib import Path

import pytest

from fitnet.cli import build_parser, main

SMALL_MODEL = """\
model:
  embedding_dims: {item_id: 4, category_id: 2, dest_city_id: 2, reside_city_id: 2, home_city_id: 2, gender: 2, age_level: 2}
  self_attention_dim: 16
  intention_hidden: [4]
  user_hidden: [8]
  item_hidden: [8]
  repr_dim: 4
train:
  epochs: 1
  batch_size: 32
sampling:
  ratio: 3
"""

DATA = ["--users", "60", "--items", "480", "--cities", "8"]


def run(capsys, *argv):
    code = main(list(map(str, argv)))
    out, err = capsys.readouterr()
    return code, out, err


def digest(d: Path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "c.yaml"
    cfg.write_text(SMALL_MODEL)
    assert main(["gen-data", "--seed", "3", *DATA, "--out", str(root / "d")]) == 0
    assert main(["train", "--data", str(root / "d"), "--config", str(cfg), "--out", str(root / "m.ckpt"), "--quiet"]) == 0
    return root


@pytest.mark.parametrize("command", ["gen-data", "train", "eval", "retrieve", "inspect"])
def test_help_lists_flags_with_defaults(capsys, command):
    with pytest.raises(SystemExit) as info:
        main([command, "--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in out
        if action.option_strings and action.dest != "help":
            text = action.help or ""
            assert ("required" in text) if action.required else ("default" in text), action.dest


def test_usage_errors_exit_1(capsys, tmp_path):
    assert run(capsys, "gen-data", "--out", tmp_path, "--bogus", "1")[0] == 1
    assert run(capsys)[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "gen-data")[0] == 1  # --out missing
    assert run(capsys, "gen-data", "--out", tmp_path, "--users", "abc")[0] == 1
    assert run(capsys, "gen-data", "--out", tmp_path, "--cities", "2")[0] == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("nonsense: {}\n")
    assert run(capsys, "gen-data", "--out", tmp_path, "--config", bad)[0] == 1


def test_gen_data_is_deterministic_and_prints_config(capsys, tmp_path):
    code, out, err = run(capsys, "gen-data", "--seed", "5", *DATA, "--out", tmp_path / "a")
    assert code == 0
    m = re.search(r"effective config: (\{.*\})", err)
    eff = json.loads(m.group(1))
    assert eff["data"]["n_users"] == 60 and eff["data"]["seed"] == 5
    assert eff["data"]["n_categories"] == 12  # defaulted values are shown too
    run(capsys, "gen-data", "--seed", "5", *DATA, "--out", tmp_path / "b")
    assert digest(tmp_path / "a") == digest(tmp_path / "b")


def test_config_file_and_flag_precedence(capsys, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seed: 9\ndata: {n_users: 40, n_items: 480, n_cities: 8}\n")
    _, _, err = run(capsys, "gen-data", "--config", cfg, "--users", "30", "--out", tmp_path / "d")
    eff = json.loads(re.search(r"effective config: (\{.*\})", err).group(1))
    assert eff["data"]["n_users"] == 30 and eff["data"]["seed"] == 9


def test_train_then_eval_prints_four_methods(capsys, pipeline):
    for m in ("fitnet-minus", "avgpool"):
        assert (pipeline / f"m.{m}.ckpt").exists()
    code, out, err = run(capsys, "eval", "--ckpt", pipeline / "m.ckpt", "--corpus", pipeline / "d", "--threads", "2")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "method,k,hitrate,precision"
    rows = [l.split(",") for l in lines[1:17]]
    assert [r[0] for r in rows[::4]] == ["fitnet", "fitnet-minus", "avgpool", "orderdest2i"]
    assert [int(r[1]) for r in rows[:4]] == [3, 10, 20, 50]
    assert "test cases" in out
    assert '"threads": 2' in err


def test_eval_threads_fall_back_to_env(capsys, pipeline, monkeypatch):
    monkeypatch.setenv("FITNET_THREADS", "3")
    code, out1, err = run(capsys, "eval", "--ckpt", pipeline / "m.ckpt", "--corpus", pipeline / "d", "--ks", "5")
    assert code == 0 and '"threads": 3' in err
    monkeypatch.setenv("FITNET_THREADS", "1")
    _, out2, _ = run(capsys, "eval", "--ckpt", pipeline / "m.ckpt", "--corpus", pipeline / "d", "--ks", "5")
    assert out1 == out2


def test_eval_report_files_are_deterministic(capsys, pipeline, tmp_path):
    for name in ("r1", "r2"):
        assert run(capsys, "eval", "--ckpt", pipeline / "m.ckpt", "--corpus", pipeline / "d", "--report", tmp_path / name)[0] == 0
    files = digest(tmp_path / "r1")
    assert set(files) == {"results.csv", "hitrate.png", "precision.png"}
    assert files == digest(tmp_path / "r2")
    assert (tmp_path / "r1" / "hitrate.png").read_bytes()[:4] == b"\x89PNG"


def test_train_is_deterministic(capsys, pipeline, tmp_path):
    code, out, _ = run(capsys, "train", "--data", pipeline / "d", "--config", pipeline / "c.yaml", "--out", tmp_path / "m.ckpt", "--quiet")
    assert code == 0 and len(out.splitlines()) == 3
    for name in ("m.ckpt", "m.fitnet-minus.ckpt", "m.avgpool.ckpt"):
        assert (tmp_path / name).read_bytes() == (pipeline / name).read_bytes()


def test_train_progress_lines(capsys, pipeline, tmp_path):
    code, _, err = run(capsys, "train", "--data", pipeline / "d", "--config", pipeline / "c.yaml", "--out", tmp_path / "m.ckpt", "--methods", "var1")
    assert code == 0
    assert re.search(r"\[var1\] epoch 1/1 mean loss \d", err)


def test_retrieve_format(capsys, pipeline):
    user = json.loads((pipeline / "d" / "test.jsonl").read_text().splitlines()[0])["user_id"]
    code, out, _ = run(capsys, "retrieve", "--ckpt", pipeline / "m.ckpt", "--corpus", pipeline / "d", "--user", user, "--k", "7")
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 7
    scores = []
    for line in lines:
        item, score = line.split("\t")
        assert item.startswith("item")
        scores.append(float(score))
    assert scores == sorted(scores, reverse=True)
    assert run(capsys, "retrieve", "--ckpt", pipeline / "m.ckpt", "--corpus", pipeline / "d", "--user", "nobody")[0] == 2
    assert run(capsys, "retrieve", "--ckpt", pipeline / "m.ckpt", "--corpus", pipeline / "d", "--user", user, "--k", "0")[0] == 1


def test_inspect(capsys, pipeline):
    code, out, err = run(capsys, "inspect", pipeline / "m.ckpt")
    assert code == 0
    assert "format_version\t1" in out
    count = int(re.search(r"parameter_count\t(\d+)", out).group(1))
    shapes = re.findall(r"shape\t\S+\t([\dx]+)", out)
    total = 0
    for s in shapes:
        n = 1
        for d in s.split("x"):
            n *= int(d)
        total += n
    assert total == count > 0
    assert "effective config" in err


def test_data_errors_exit_2(capsys, pipeline, tmp_path):
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes((pipeline / "m.ckpt").read_bytes()[:100])
    assert run(capsys, "inspect", broken)[0] == 2
    assert run(capsys, "inspect", tmp_path / "missing.ckpt")[0] == 2
    assert run(capsys, "eval", "--ckpt", pipeline / "m.ckpt", "--corpus", tmp_path / "nowhere")[0] == 2
    lonely = tmp_path / "solo.ckpt"
    lonely.write_bytes((pipeline / "m.ckpt").read_bytes())
    assert run(capsys, "eval", "--ckpt", lonely, "--corpus", pipeline / "d")[0] == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exits_3(capsys, pipeline, tmp_path):
    code, _, err = run(capsys, "train", "--data", pipeline / "d", "--config", pipeline / "c.yaml", "--out", tmp_path / "x.ckpt", "--lr", "1e300", "--methods", "fitnet")
    assert code == 3
    assert "batch" in err


def test_shipped_comparison_config_matches_acceptance_settings(capsys, pipeline, tmp_path):
    from test_acceptance import EXPERIMENT_DATA, EXPERIMENT_MODEL, EXPERIMENT_TRAIN

    cfg = Path(__file__).resolve().parents[1] / "configs" / "comparison.yaml"
    code, _, err = run(capsys, "train", "--config", cfg, "--data", pipeline / "d", "--out", tmp_path / "m.ckpt",
                       "--epochs", "1", "--methods", "avgpool", "--quiet")
    assert code == 0
    eff = json.loads(re.search(r"effective config: (\{.*\})", err).group(1))
    assert eff["model"]["embedding_dims"] == EXPERIMENT_MODEL["embedding_dims"]
    assert eff["train"]["learning_rate"] == EXPERIMENT_TRAIN["learning_rate"]
    assert (eff["sampling"]["setting"], eff["sampling"]["ratio"]) == (1, 10)
    code, _, err = run(capsys, "gen-data", "--config", cfg, "--users", "40", "--items", "480", "--out", tmp_path / "d")
    eff = json.loads(re.search(r"effective config: (\{.*\})", err).group(1))
    assert {k: eff["data"][k] for k in ("n_cities", "test_fraction")} == {
        k: EXPERIMENT_DATA[k] for k in ("n_cities", "test_fraction")
    }
    import yaml

    raw = yaml.safe_load(cfg.read_text())
    assert raw["data"]["n_users"] == EXPERIMENT_DATA["n_users"]
    assert raw["train"]["epochs"] == EXPERIMENT_TRAIN["epochs"]
