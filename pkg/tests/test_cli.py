"""Command-line interface: subcommands, overrides, and exit codes (0 success,
1 input/validation error, 2 runtime failure)."""
import dataclasses
import json

import pytest

from test_pipeline import micro_config
from weightfield import config as config_mod
from weightfield.cli import main


def write_config(tmp_path, cfg):
    path = tmp_path / "run.json"
    config_mod.save_config(cfg, path)
    return str(path)


def test_init_config_stdout(capsys):
    assert main(["init-config"]) == 0
    parsed = json.loads(capsys.readouterr().out)
    assert parsed["mode"] == "3d"
    assert parsed["mlp"]["width"] == 128
    assert parsed["schedule"]["timesteps"] == 500


def test_init_config_4d_file(tmp_path):
    out = tmp_path / "anim.json"
    assert main(["init-config", "--mode", "4d", "--out", str(out)]) == 0
    cfg = config_mod.load_config(out)
    assert cfg.mode == "4d"
    assert cfg.mlp.input_dim == 4


def test_missing_config_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["fit"])
    assert exc.value.code == 2  # argparse usage error


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_nonexistent_config_file_exits_1(tmp_path, capsys):
    assert main(["fit", "--config", str(tmp_path / "nope.json")]) == 1
    assert "error:" in capsys.readouterr().err


def test_malformed_config_exits_1(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["fit", "--config", str(path)]) == 1


def test_unknown_config_key_exits_1(tmp_path, capsys):
    cfg = config_mod.to_dict(config_mod.default_config())
    cfg["dataset"]["n_points"] = 7
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert main(["fit", "--config", str(path)]) == 1
    assert "unknown keys" in capsys.readouterr().err


def test_mode_conflict_exits_1(tmp_path, capsys):
    path = write_config(tmp_path, micro_config(tmp_path / "run"))
    assert main(["fit", "--config", path, "--mode", "4d"]) == 1
    assert "conflicts" in capsys.readouterr().err


def test_bad_trajectory_exits_1(tmp_path, capsys):
    path = write_config(tmp_path, micro_config(tmp_path / "run"))
    assert main(["sample", "--config", path, "--trajectory", "a,b"]) == 1
    assert "trajectory" in capsys.readouterr().err


def test_sample_before_fit_exits_1(tmp_path, capsys):
    path = write_config(tmp_path, micro_config(tmp_path / "run"))
    assert main(["sample", "--config", path]) == 1
    assert "fit" in capsys.readouterr().err


def test_run_dir_collision_exits_2(tmp_path, capsys):
    blocker = tmp_path / "blocked"
    blocker.write_text("a file, not a directory\n")
    path = write_config(tmp_path, micro_config(blocker))
    assert main(["fit", "--config", path]) == 2
    assert "runtime failure" in capsys.readouterr().err


def test_seed_override_recorded(tmp_path):
    cfg = micro_config(tmp_path / "run")
    path = write_config(tmp_path, cfg)
    assert main(["fit", "--config", path, "--seed", "7"]) == 0
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 7


def test_full_pipeline_cli(tmp_path):
    cfg = micro_config(tmp_path / "run")
    path = write_config(tmp_path, cfg)
    assert main(["pipeline", "--config", path]) == 0
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["metrics"] is not None
    assert len(manifest["extracted"]) == cfg.sample.count


def test_extract_with_external_checkpoints(tmp_path):
    cfg = micro_config(tmp_path / "run")
    path = write_config(tmp_path, cfg)
    assert main(["pipeline", "--config", path]) == 0
    ckpts = tmp_path / "run" / "samples"
    assert main(["extract", "--config", path, "--checkpoints", str(ckpts)]) == 0
    assert main(["extract", "--config", path,
                 "--checkpoints", str(tmp_path / "missing")]) == 1


def test_eval_external_dirs(tmp_path):
    cfg = micro_config(tmp_path / "run")
    path = write_config(tmp_path, cfg)
    assert main(["pipeline", "--config", path]) == 0
    gen = tmp_path / "run" / "extracted"
    ref = tmp_path / "run" / "meshes"
    assert main(["eval", "--config", path, "--generated", str(gen),
                 "--reference", str(ref)]) == 0
    assert (tmp_path / "run" / "metrics.json").exists()
