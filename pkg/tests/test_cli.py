import json

import numpy as np
import pytest

from worldsim.cli import main


def test_selfcheck_exits_zero(capsys):
    assert main(["selfcheck"]) == 0
    out = capsys.readouterr().out
    assert "checks passed" in out


def test_unknown_subcommand_exits_one(capsys):
    assert main(["frobnicate"]) == 1
    err = capsys.readouterr().err
    assert "usage" in err.lower() or "invalid" in err.lower()


def test_rollout_missing_required_flag_names_it(capsys):
    assert main(["rollout", "--out", "/tmp/x"]) == 1
    err = capsys.readouterr().err
    assert "--world-model" in err


def test_bad_config_exits_one(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"tokenizer": {"bogus_key": 1}}))
    assert main(["generate-data", "--config", str(cfg)]) == 1
    assert "bogus_key" in capsys.readouterr().err


def test_missing_checkpoint_exits_nonzero(tmp_path, capsys):
    code = main([
        "tokenize", "--checkpoint", str(tmp_path / "missing.wsck"),
        "--dataset", str(tmp_path), "--out", str(tmp_path / "out"),
    ])
    assert code in (1, 2)


def test_fit_scaling_law_from_records(tmp_path, capsys):
    records = tmp_path / "records.jsonl"
    rows = []
    for i, x in enumerate(np.logspace(5, 8, 8)):
        rows.append({
            "tag": f"s{i}", "width": 32, "layers": 2,
            "params_ex_embedding": 1000, "tokens_seen": int(x / 6000),
            "compute": float(x), "final_loss": 1.5 + (x / 1e6) ** -0.3,
            "curve": [], "failed": False,
        })
    records.write_text("\n".join(json.dumps(r) for r in rows))
    out = tmp_path / "fit.json"
    assert main(["fit-scaling-law", "--records", str(records), "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["fit"]["c"] == pytest.approx(1.5, rel=0.01)


def test_generate_data_creates_dataset(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "out_root": str(tmp_path / "run"),
        "data": {"train_episodes": 2, "val_episodes": 1, "episode_length": 8},
    }))
    assert main(["generate-data", "--config", str(cfg)]) == 0
    assert (tmp_path / "run" / "dataset" / "train" / "manifest.json").exists()
    assert (tmp_path / "run" / "effective_config.json").exists()
