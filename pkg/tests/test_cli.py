import json

import numpy as np
import pytest

from aap import checkpoint as ckpt_io
from aap.cli import main
from aap.evalharness import MetricsSummary, read_records

from helpers import tiny_config_text


@pytest.fixture
def cfg(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("AAP_OUTPUT_ROOT", raising=False)

    def write(name="run.ini", **kw):
        path = tmp_path / name
        path.write_text(tiny_config_text(**kw))
        return str(path)
    return write


def test_dry_run_prints_effective_config(cfg, capsys, tmp_path):
    assert main(["train", "--config", cfg(), "--dry-run"]) == 0
    out = capsys.readouterr().out
    assert "total_steps = 400" in out and "# config_hash = " in out
    assert not (tmp_path / "runs").exists()


def test_missing_task_exits_2_naming_field(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nvariant = aap\n")
    assert main(["train", "--config", str(bad)]) == 2
    assert "run.task" in capsys.readouterr().err


def test_resume_requires_seed(cfg, capsys):
    assert main(["train", "--config", cfg(), "--resume", "x.ckpt"]) == 2


def test_two_seeds_train_into_separate_dirs(cfg, tmp_path):
    assert main(["train", "--config", cfg(seeds="0, 1", total_steps=80), "--quiet"]) == 0
    for s in (0, 1):
        d = tmp_path / "runs/tiny" / f"seed_{s}"
        assert (d / "final.ckpt").exists() and (d / "train_log.jsonl").exists()
        assert ckpt_io.load(d / "final.ckpt").extra["seed"] == s
    a = ckpt_io.load(tmp_path / "runs/tiny/seed_0/final.ckpt").params()
    b = ckpt_io.load(tmp_path / "runs/tiny/seed_1/final.ckpt").params()
    assert any(not np.array_equal(a[k], b[k]) for k in a)


def test_output_root_env(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("AAP_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["train", "--config", cfg(total_steps=40), "--quiet"]) == 0
    assert (tmp_path / "root/runs/tiny/seed_0/final.ckpt").exists()


def test_eval_refuses_foreign_checkpoint(cfg, tmp_path, capsys):
    assert main(["train", "--config", cfg(total_steps=40), "--quiet"]) == 0
    ck = str(tmp_path / "runs/tiny/seed_0/final.ckpt")
    other = cfg("other.ini", variant="gru_lac")
    argv = ["eval", "--checkpoint", ck, "--config", other, "--out", "ev", "--drift-cell", "0,45"]
    assert main(argv) == 2
    assert "config hash" in capsys.readouterr().err
    # the stored config matches by construction
    assert main(["eval", "--checkpoint", ck, "--out", "ev", "--drift-cell", "0,45"]) == 0
    # forcing a mismatched (incompatible) config through fails loading, not silently
    assert main(argv + ["--allow-hash-mismatch"]) != 0


def test_eval_override_with_compatible_config(cfg, tmp_path):
    assert main(["train", "--config", cfg(total_steps=40), "--quiet"]) == 0
    ck = str(tmp_path / "runs/tiny/seed_0/final.ckpt")
    # same structure, different damping: hash differs but parameters still load
    path = tmp_path / "friction.ini"
    path.write_text(tiny_config_text() + "[env]\ndamping = 0.5\n")
    argv = ["eval", "--checkpoint", ck, "--config", str(path), "--out", "ev", "--drift-cell", "0,45"]
    assert main(argv) == 2
    assert main(argv + ["--allow-hash-mismatch"]) == 0


def test_disable_is_nav2d_only(cfg, capsys):
    assert main(["sweep", "--config", cfg(), "--disable", "right", "--dry-run"]) == 2
    assert main(["sweep", "--config", cfg(task="nav2d-pointnav"), "--disable", "right", "--dry-run"]) == 0
    assert "# eval cells = 1" in capsys.readouterr().out


def test_untrained_nav2d_with_right_disabled(cfg, tmp_path, capsys):
    path = cfg(task="nav2d-pointnav", total_steps=40)
    assert main(["sweep", "--config", path, "--disable", "right", "--quiet"]) == 0
    summary = MetricsSummary.from_csv((tmp_path / "runs/tiny/eval_right/summary.csv").read_text())
    (cell,) = summary.cells
    assert (cell["drift_dm"], cell["drift_dr"]) == (0.2, 0.0)
    assert cell["sr_mean"] <= 0.34
    recs = read_records(tmp_path / "runs/tiny/eval_right/records.jsonl")
    assert len(recs) == 3 and all(r.disabled_uses >= 0 for r in recs)


def _artifacts(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_sweep_is_byte_identical_across_runs(cfg, tmp_path):
    path = cfg(total_steps=80)
    assert main(["sweep", "--config", path, "--out", "a", "--quiet", "--episodes", "2"]) == 0
    assert main(["sweep", "--config", path, "--out", "b", "--quiet", "--episodes", "2"]) == 0
    a, b = _artifacts(tmp_path / "a"), _artifacts(tmp_path / "b")
    assert a.keys() == b.keys()
    assert {"seed_0/train_log.jsonl", "seed_0/final.ckpt", "eval/summary.csv", "eval/records.jsonl"} <= a.keys()
    assert a == b


def test_plot_and_table(cfg, tmp_path, capsys):
    path = cfg(total_steps=40)
    assert main(["sweep", "--config", path, "--quiet", "--episodes", "2"]) == 0
    summary_path = tmp_path / "runs/tiny/eval/summary.csv"
    summary = MetricsSummary.from_csv(summary_path.read_text())
    assert main(["plot", str(summary_path), str(summary_path), "--labels", "x", "y", "--out", "fig/sr.svg"]) == 0
    svg = (tmp_path / "fig/sr.svg").read_text()
    table = (tmp_path / "fig/sr.csv").read_text().splitlines()
    drs = sorted(c["drift_dr"] for c in summary.cells)
    for dr in drs:
        assert f">{dr:g}<" in svg or f"{dr:g}" in svg
    assert len(table) == 1 + 2 * len(drs)
    by_dr = {c["drift_dr"]: c for c in summary.cells}
    for line in table[1:]:
        label, family, x, mean, std = line.split(",")
        assert family == "dr"
        assert float(mean) == by_dr[float(x)]["sr_mean"] and float(std) == by_dr[float(x)]["sr_std"]


def test_plot_rejects_mismatched_grids(cfg, tmp_path):
    path = cfg(total_steps=40)
    assert main(["sweep", "--config", path, "--quiet", "--episodes", "1"]) == 0
    assert main(["sweep", "--config", path, "--out", "one", "--quiet", "--episodes", "1",
                 "--drift-cell", "0,45"]) == 0
    assert main(["plot", "runs/tiny/eval/summary.csv", "one/eval/summary.csv", "--out", "f.svg"]) == 1


def test_inspect_checkpoint(cfg, tmp_path, capsys):
    assert main(["train", "--config", cfg(total_steps=40), "--quiet"]) == 0
    capsys.readouterr()
    assert main(["inspect-checkpoint", str(tmp_path / "runs/tiny/seed_0/final.ckpt")]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["task"] == "particle-pointnav" and info["n_parameters"] > 0
    (tmp_path / "junk.ckpt").write_bytes(b"nope")
    assert main(["inspect-checkpoint", str(tmp_path / "junk.ckpt")]) == 1
