"""Two pipeline runs from one config must be identical artifact-for-artifact."""

import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

TINY = {
    "seed": 4,
    "data": {"train_episodes": 3, "val_episodes": 1, "episode_length": 16},
    "tokenizer": {"train_steps": 12, "batch_size": 2},
    "world_model": {"train_steps": 8, "batch_size": 2, "steps": 3},
    "inference": {"horizon": 2},
}


def _run_pipeline(root: Path) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    config = dict(TINY)
    config["out_root"] = str(root / "run")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(config))
    for stage in ("generate-data", "train-tokenizer", "train-world-model"):
        proc = subprocess.run(
            [sys.executable, "-m", "worldsim.cli", stage, "--config", str(cfg)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
    proc = subprocess.run(
        [sys.executable, "-m", "worldsim.cli", "rollout", "--config", str(cfg),
         "--world-model", str(root / "run/checkpoints/world_model.wsck"),
         "--horizon", "2", "--k", "4", "--seed", "9", "--no-decode",
         "--out", str(root / "roll")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return root


def _metrics_without_wall(path: Path) -> list[dict]:
    rows = []
    for line in path.read_text().splitlines():
        row = json.loads(line)
        row.pop("wall")
        rows.append(row)
    return rows


def _dir_digest(path: Path) -> str:
    h = hashlib.sha256()
    for file in sorted(path.rglob("*")):
        if file.is_file():
            h.update(str(file.relative_to(path)).encode())
            h.update(file.read_bytes())
    return h.hexdigest()


@pytest.mark.slow
def test_two_runs_produce_identical_artifacts(tmp_path):
    run_a = _run_pipeline(tmp_path / "a")
    run_b = _run_pipeline(tmp_path / "b")

    # metrics logs identical once wall-clock fields are dropped
    for name in ("tokenizer.jsonl", "world_model.jsonl"):
        assert _metrics_without_wall(run_a / "run/metrics" / name) == \
            _metrics_without_wall(run_b / "run/metrics" / name)

    # rollout token frames bit-identical
    tok_a = (run_a / "roll/token_frames.wst").read_bytes()
    tok_b = (run_b / "roll/token_frames.wst").read_bytes()
    assert tok_a == tok_b

    # checkpoints bit-identical
    for name in ("tokenizer.wsck", "world_model.wsck"):
        assert (run_a / "run/checkpoints" / name).read_bytes() == \
            (run_b / "run/checkpoints" / name).read_bytes()


@pytest.mark.slow
def test_training_does_not_mutate_dataset(tmp_path):
    root = tmp_path / "a"
    config = dict(TINY)
    config["out_root"] = str(root / "run")
    cfg = root / "cfg.json"
    root.mkdir()
    cfg.write_text(json.dumps(config))
    proc = subprocess.run(
        [sys.executable, "-m", "worldsim.cli", "generate-data", "--config", str(cfg)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    before = _dir_digest(root / "run/dataset")
    for stage in ("train-tokenizer", "train-world-model"):
        proc = subprocess.run(
            [sys.executable, "-m", "worldsim.cli", stage, "--config", str(cfg)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
    assert _dir_digest(root / "run/dataset") == before
