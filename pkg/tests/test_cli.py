import json
import subprocess
import sys
from pathlib import Path

import pytest

CLI = [sys.executable, "-m", "chainrec.cli"]


def run_cli(*argv, cwd=None, stdin=None):
    return subprocess.run(CLI + list(argv), capture_output=True, text=True,
                          input=stdin, cwd=cwd, timeout=600)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny end-to-end pipeline: data -> embeddings -> checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    gen = run_cli("data", "gen", "--out", str(data), "--users", "4", "--items", "30",
                  "--attributes", "12", "--types", "3", "--attrs-per-item", "3",
                  "--interactions-per-user", "6", "--attr-skew", "1.0",
                  "--labels", "--seed", "11")
    assert gen.returncode == 0, gen.stderr
    emb = root / "emb.npz"
    embed = run_cli("embed", "--data", str(data), "--out", str(emb),
                    "--dim", "6", "--epochs", "10", "--seed", "3")
    assert embed.returncode == 0, embed.stderr
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({
        "episodes": 6, "lr": 1e-3, "batch_size": 4, "t_max": 6, "k_p": 2,
        "k_v": 2, "prune_items": 6, "prune_attrs": 6, "target_sync": 5,
    }))
    run_dir = root / "run"
    tr = run_cli("train", "--data", str(data), "--embeddings", str(emb),
                 "--config", str(cfg), "--seed", "1", "--out", str(run_dir))
    assert tr.returncode == 0, tr.stderr
    return {"root": root, "data": data, "emb": emb, "cfg": cfg, "run": run_dir}


def test_data_gen_deterministic(workspace, tmp_path):
    out2 = tmp_path / "again"
    gen = run_cli("data", "gen", "--out", str(out2), "--users", "4", "--items", "30",
                  "--attributes", "12", "--types", "3", "--attrs-per-item", "3",
                  "--interactions-per-user", "6", "--attr-skew", "1.0",
                  "--labels", "--seed", "11")
    assert gen.returncode == 0
    for name in ("items.jsonl", "attributes.jsonl", "interactions.jsonl",
                 "kg_triples.jsonl", "labels.jsonl"):
        assert (out2 / name).read_bytes() == (workspace["data"] / name).read_bytes()
    counts = json.loads(gen.stdout)
    assert counts["items"] == 30 and counts["users"] == 4


def test_data_validate(workspace):
    out = run_cli("data", "validate", "--data", str(workspace["data"]))
    assert out.returncode == 0
    assert json.loads(out.stdout)["issues"] == []


def test_train_is_deterministic(workspace, tmp_path):
    second = tmp_path / "run2"
    tr = run_cli("train", "--data", str(workspace["data"]),
                 "--embeddings", str(workspace["emb"]),
                 "--config", str(workspace["cfg"]), "--seed", "1",
                 "--out", str(second))
    assert tr.returncode == 0, tr.stderr
    assert (second / "history.csv").read_bytes() == \
        (workspace["run"] / "history.csv").read_bytes()


def test_train_outputs_exist(workspace):
    run_dir = workspace["run"]
    assert (run_dir / "checkpoint.npz").is_file()
    header = (run_dir / "history.csv").read_text().splitlines()[0]
    assert header == "episode,q_loss,term_loss,fb_loss,rolling_SR,epsilon"
    cfg = json.loads((run_dir / "config.json").read_text())
    assert cfg["episodes"] == 6 and cfg["seed"] == 1


def test_eval_writes_schema_compliant_report(workspace, tmp_path):
    report_path = tmp_path / "report.json"
    ev = run_cli("eval", "--data", str(workspace["data"]),
                 "--checkpoint", str(workspace["run"] / "checkpoint.npz"),
                 "--out", str(report_path), "--sr-csv", str(tmp_path / "sr.csv"),
                 "--episodes-out", str(tmp_path / "episodes.jsonl"), "--seed", "2")
    assert ev.returncode == 0, ev.stderr
    report = json.loads(report_path.read_text())
    assert set(report) == {"sr_curve", "at", "hdcg", "episodes", "formula_version"}
    assert len(report["sr_curve"]) == 6  # t_max from the checkpoint config
    assert all(a <= b for a, b in zip(report["sr_curve"], report["sr_curve"][1:]))
    lines = (tmp_path / "episodes.jsonl").read_text().splitlines()
    assert len(lines) == report["episodes"]


def test_eval_deterministic(workspace, tmp_path):
    outs = []
    for name in ("a.json", "b.json"):
        path = tmp_path / name
        ev = run_cli("eval", "--data", str(workspace["data"]),
                     "--checkpoint", str(workspace["run"] / "checkpoint.npz"),
                     "--out", str(path), "--seed", "7")
        assert ev.returncode == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_eval_baseline(workspace, tmp_path):
    path = tmp_path / "baseline.json"
    ev = run_cli("eval", "--data", str(workspace["data"]),
                 "--baseline", "abs_greedy", "--embeddings", str(workspace["emb"]),
                 "--config", str(workspace["cfg"]),
                 "--out", str(path), "--seed", "2")
    assert ev.returncode == 0, ev.stderr
    assert json.loads(path.read_text())["episodes"] > 0


def test_ablate_runs(workspace, tmp_path):
    path = tmp_path / "ablation.json"
    ab = run_cli("ablate", "--data", str(workspace["data"]),
                 "--embeddings", str(workspace["emb"]),
                 "--variant", "no_feedback",
                 "--checkpoint", str(workspace["run"] / "checkpoint.npz"),
                 "--config", str(workspace["cfg"]),
                 "--out", str(path), "--seed", "2")
    assert ab.returncode == 0, ab.stderr
    assert "sr_curve" in json.loads(path.read_text())


def test_unknown_subcommand_exits_2():
    out = run_cli("frobnicate")
    assert out.returncode == 2
    assert "usage" in out.stderr.lower()


def test_unknown_flag_exits_2(workspace):
    out = run_cli("train", "--data", str(workspace["data"]), "--wat")
    assert out.returncode == 2
    assert "usage" in out.stderr.lower()


def test_config_parse_error_exits_1(workspace, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    out = run_cli("train", "--data", str(workspace["data"]),
                  "--embeddings", str(workspace["emb"]),
                  "--config", str(bad), "--out", str(tmp_path / "x"))
    assert out.returncode == 1
    assert "config" in out.stderr


def test_help_exhaustive():
    out = run_cli("--help")
    assert out.returncode == 0
    for sub in ("data", "embed", "train", "eval", "ablate", "serve", "chat"):
        assert sub in out.stdout


def test_chat_scripted_session(workspace):
    # answer everything with 'y': accepts the first recommendation
    script = "0\n" + "y\n" * 60
    out = run_cli("chat", "--data", str(workspace["data"]),
                  "--checkpoint", str(workspace["run"] / "checkpoint.npz"),
                  "--seed", "4", stdin=script)
    assert out.returncode == 0, out.stderr
    assert "found it" in out.stdout or "no luck" in out.stdout