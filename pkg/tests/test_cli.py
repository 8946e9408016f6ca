import json
import subprocess
import sys

import pytest

from iccbf import campaign as C
from iccbf.__main__ import main


def test_dataset_build_deterministic(tmp_path, capsys):
    assert main(["dataset", "build", "--env", "docking", "--n", "4", "--seed", "3", "--out", str(tmp_path / "a")]) == 0
    assert main(["dataset", "build", "--env", "docking", "--n", "4", "--seed", "3", "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "docking_dataset.json").read_bytes()
    assert a == (tmp_path / "b" / "docking_dataset.json").read_bytes()
    assert "sha256=" in capsys.readouterr().out


def test_dataset_from_config(tmp_path):
    cfg = tmp_path / "env.json"
    cfg.write_text(json.dumps({"env": "cruise", "T": 0.1, "horizon": 40, "seed": 8}))
    assert main(["dataset", "build", "--config", str(cfg), "--n", "2", "--out", str(tmp_path)]) == 0
    ds = C.McDataset.load(tmp_path / "cruise_dataset.json")
    assert ds.horizon == 40 and ds.seed == 8 and len(ds) == 2


def test_config_env_conflict(tmp_path, capsys):
    cfg = tmp_path / "env.json"
    cfg.write_text(json.dumps({"env": "cruise"}))
    assert main(["dataset", "build", "--env", "docking", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "disagrees" in capsys.readouterr().err


def test_eval_untuned(tmp_path, capsys):
    main(["dataset", "build", "--env", "cruise", "--n", "2", "--out", str(tmp_path)])
    rc = main(["eval", "--dataset", str(tmp_path / "cruise_dataset.json"), "--out", str(tmp_path),
               "--audit-substeps", "0"])
    assert rc == 0
    s = C.McSummary.from_json((tmp_path / "cruise_untuned_summary.json").read_text())
    assert s.n == 2 and s.controller == "untuned"
    assert "safe" in capsys.readouterr().out


def test_eval_missing_dataset(tmp_path, capsys):
    assert main(["eval", "--dataset", str(tmp_path / "nope.json")]) == 2
    assert "error" in capsys.readouterr().err


def test_train_then_eval(tmp_path):
    ppo_cfg = tmp_path / "ppo.json"
    ppo_cfg.write_text(json.dumps({"n_steps": 32, "batch_size": 16, "n_epochs": 1}))
    cfg = tmp_path / "env.json"
    cfg.write_text(json.dumps({"env": "cruise", "horizon": 10}))
    assert main(["train", "--config", str(cfg), "--ppo-config", str(ppo_cfg), "--timesteps", "32",
                 "--out", str(tmp_path), "--quiet"]) == 0
    assert (tmp_path / "train_log.csv").exists()
    rc = main(["mc", "--config", str(cfg), "--n", "2", "--checkpoint", str(tmp_path / "checkpoint.json"),
               "--out", str(tmp_path), "--audit-substeps", "0"])
    assert rc == 0
    assert (tmp_path / "cruise_checkpoint_summary.json").exists()


def test_margin_audit_cli(tmp_path):
    rc = main(["margin-audit", "--env", "cruise", "--samples", "4", "--grid-samples", "500", "--out", str(tmp_path)])
    assert rc == 0
    lines = (tmp_path / "margin_audit.csv").read_text().strip().splitlines()
    assert len(lines) == 5 and all(l.endswith(",1") for l in lines[1:])


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "iccbf", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("dataset", "train", "eval", "mc", "margin-audit"):
        assert cmd in out.stdout


def test_unknown_env_rejected():
    with pytest.raises(SystemExit):
        main(["dataset", "build", "--env", "rover"])
