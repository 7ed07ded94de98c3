import json
import os
from pathlib import Path

import pytest

from avsf import config as cfgmod
from avsf.cli import main
from avsf.errors import ConfigError


# ---------------------------------------------------------------------------
# config resolution


def test_profiles_build_valid_dataclasses(tmp_path):
    for profile in cfgmod.PROFILES:
        resolved = cfgmod.default_run_config(profile)
        cfgmod.build_corpus_config(resolved, tmp_path)
        cfgmod.build_video_config(resolved)
        cfgmod.build_audio_config(resolved)
        cfgmod.build_pretrain_config(resolved)
        cfgmod.build_finetune_config(resolved)


def test_unknown_key_is_named(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("pretrain:\n  batch_sizes: 4\n")
    with pytest.raises(ConfigError, match="pretrain.batch_sizes"):
        cfgmod.load_run_config(cfg)


def test_overlay_merges(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("pretrain:\n  batch_size: 4\ncorpus:\n  master_seed: 9\n")
    resolved = cfgmod.load_run_config(cfg)
    assert resolved["pretrain"]["batch_size"] == 4
    assert resolved["corpus"]["master_seed"] == 9
    assert resolved["pretrain"]["lr0"] == 0.01  # untouched default


def test_config_hash_is_stable_and_sensitive():
    a = cfgmod.default_run_config("tiny")
    b = cfgmod.default_run_config("tiny")
    assert cfgmod.config_hash(a) == cfgmod.config_hash(b)
    b["pretrain"]["seed"] = 1
    assert cfgmod.config_hash(a) != cfgmod.config_hash(b)


# ---------------------------------------------------------------------------
# CLI


def test_help_lists_subcommands_and_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for sub in ("corpus", "pretrain", "finetune", "eval", "robust", "export", "verify"):
        assert sub in out
    with pytest.raises(SystemExit) as exc:
        main(["finetune", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--config", "--seed", "--profile", "--jobs", "--out-dir", "--checkpoint", "--from-scratch"):
        assert flag in out


def test_invalid_yaml_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("corpus:\n  master_seed: [unclosed\n")
    code = main(["corpus", "--config", str(bad), "--out-dir", str(tmp_path / "d")])
    err = capsys.readouterr().err
    assert code == 1
    assert "line" in err


def test_unknown_key_nonzero_exit(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("corpus:\n  masterseed: 3\n")
    code = main(["corpus", "--config", str(bad), "--out-dir", str(tmp_path / "d")])
    err = capsys.readouterr().err
    assert code == 1 and "corpus.masterseed" in err


@pytest.fixture(scope="module")
def micro_config(tmp_path_factory):
    """Smallest corpus/training settings that still run every command."""
    path = tmp_path_factory.mktemp("cfg") / "micro.yaml"
    path.write_text(
        """
corpus:
  train: {n_real: 8, n_fake_per_family: 4}
  val: {n_real: 4, n_fake_per_family: 2}
  test: {n_real: 4, n_fake_per_family: 2}
  families: [SHUFFLE, JITTER]
video:
  frontend_channels: [4, 8]
  frontend_out_dim: 8
  d_model: 16
  n_layers: 1
  n_heads: 2
  head_dim: 8
  ff_dim: 32
  dropout: 0.0
audio:
  conv_channels: [8, 8, 8]
  conv_strides: [8, 8, 10]
  d_model: 16
  n_layers: 1
  n_heads: 2
  head_dim: 8
  ff_dim: 32
  dropout: 0.0
pretrain:
  batch_size: 4
  max_epochs: 1
finetune:
  batch_size: 4
  epochs: 1
robust:
  kinds: [GAUSS_BLUR]
  severities: [0, 1]
"""
    )
    return path


def _find_run_dir(base: Path, prefix: str) -> Path:
    matches = [d for d in base.iterdir() if d.name.startswith(prefix)]
    assert matches, f"no {prefix} run dir under {base}"
    return sorted(matches)[-1]


def test_cli_end_to_end_pipeline(micro_config, tmp_path, capsys):
    data = tmp_path / "data"
    runs = tmp_path / "runs"

    assert main(["corpus", "--config", str(micro_config), "--out-dir", str(data)]) == 0
    manifest = data / "manifest.json"
    assert manifest.exists()

    # rerun is idempotent for the same seed
    before = manifest.read_text()
    assert main(["corpus", "--config", str(micro_config), "--out-dir", str(data)]) == 0
    assert manifest.read_text() == before

    assert (
        main(["pretrain", "--config", str(micro_config), "--manifest", str(data), "--out-dir", str(runs)]) == 0
    )
    pre_dir = _find_run_dir(runs, "pretrain-")
    ckpt = pre_dir / "checkpoint.pt"
    assert ckpt.exists() and (pre_dir / "train_log.jsonl").exists()

    assert (
        main(
            [
                "finetune",
                "--config",
                str(micro_config),
                "--manifest",
                str(data),
                "--checkpoint",
                str(ckpt),
                "--out-dir",
                str(runs),
            ]
        )
        == 0
    )
    ft_dir = _find_run_dir(runs, "finetune-")
    ft_ckpt = ft_dir / "checkpoint.pt"

    assert (
        main(
            [
                "eval",
                "--config",
                str(micro_config),
                "--manifest",
                str(data),
                "--checkpoint",
                str(ft_ckpt),
                "--protocol",
                "clean",
                "--out-dir",
                str(runs),
            ]
        )
        == 0
    )
    ev_dir = _find_run_dir(runs, "eval-")
    assert (ev_dir / "test_scores.csv").exists()
    assert (ev_dir / "clean_report.json").exists()

    assert (
        main(
            [
                "robust",
                "--config",
                str(micro_config),
                "--manifest",
                str(data),
                "--checkpoint",
                str(ft_ckpt),
                "--out-dir",
                str(runs),
            ]
        )
        == 0
    )
    rb_dir = _find_run_dir(runs, "robust-")
    assert (rb_dir / "robustness_curves.csv").exists()

    assert (
        main(
            [
                "export",
                "--config",
                str(micro_config),
                "--manifest",
                str(data),
                "--checkpoint",
                str(ft_ckpt),
                "--stage",
                "frontend",
                "--out-dir",
                str(runs),
            ]
        )
        == 0
    )
    ex_dir = _find_run_dir(runs, "export-")
    assert (ex_dir / "features_frontend.csv").exists()

    # verify every JSON artifact that embeds a config
    capsys.readouterr()
    assert (
        main(
            [
                "verify",
                str(manifest),
                str(pre_dir / "run.json"),
                str(ft_dir / "run.json"),
                str(ckpt),
            ]
        )
        == 0
    )
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 4 and all(line.startswith("OK") for line in lines)


def test_verify_detects_tampering(micro_config, tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["corpus", "--config", str(micro_config), "--out-dir", str(data)]) == 0
    manifest = data / "manifest.json"
    doc = json.loads(manifest.read_text())
    doc["config"]["master_seed"] = 999
    manifest.write_text(json.dumps(doc))
    assert main(["verify", str(manifest)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_data_dir_env_fallback(micro_config, tmp_path, monkeypatch):
    env_dir = tmp_path / "from_env"
    monkeypatch.setenv("AVSF_DATA_DIR", str(env_dir))
    assert main(["corpus", "--config", str(micro_config)]) == 0
    assert (env_dir / "manifest.json").exists()
