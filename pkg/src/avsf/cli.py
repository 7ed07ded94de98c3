"""Command-line entry point.

Subcommands: corpus, pretrain, finetune, eval, robust, export, verify.
Run artifacts land in a fresh directory named by timestamp + config hash;
inputs are never mutated. The corpus root defaults to $AVSF_DATA_DIR.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import yaml

from . import config as cfgmod
from .checkpoint import Checkpoint
from .corpus import CorpusManifest, build_corpus
from .corruption import robustness_eval
from .errors import ConfigError
from .evalkit import cross_renderer_eval, export_features, leave_one_out_eval, score_videos, scores_to_csv, _cell
from .finetune import run_finetune
from .pretrain import run_pretrain


def _data_dir(args) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    env = os.environ.get("AVSF_DATA_DIR")
    if env:
        return Path(env)
    return Path("avsf_data")


def _load_config(args) -> dict:
    try:
        return cfgmod.load_run_config(args.config, args.profile)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        if mark is not None:
            raise ConfigError(f"{args.config}: line {mark.line + 1}, column {mark.column + 1}: {err}") from err
        raise ConfigError(f"{args.config}: {err}") from err


def _apply_seed(resolved: dict, seed: int | None) -> None:
    if seed is None:
        return
    resolved["corpus"]["master_seed"] = seed
    resolved["pretrain"]["seed"] = seed
    resolved["finetune"]["seed"] = seed
    resolved["robust"]["seed"] = seed


def _run_dir(base: Path, name: str, chash: str) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%S")
    d = base / f"{name}-{stamp}-{chash}"
    d.mkdir(parents=True, exist_ok=False)
    return d


def _write_run_meta(run_dir: Path, resolved: dict, chash: str, extra: dict | None = None) -> None:
    doc = {"config": resolved, "config_hash": chash}
    if extra:
        doc.update(extra)
    (run_dir / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _load_manifest(args) -> CorpusManifest:
    path = Path(args.manifest)
    if path.is_dir():
        path = path / "manifest.json"
    return CorpusManifest.load(path)


# ---------------------------------------------------------------------------
# subcommands


def cmd_corpus(args) -> int:
    resolved = _load_config(args)
    _apply_seed(resolved, args.seed)
    chash = cfgmod.config_hash(resolved)
    root = _data_dir(args)
    cfg = cfgmod.build_corpus_config(resolved, root)
    manifest = build_corpus(cfg, jobs=args.jobs)
    print(f"corpus: {len(manifest.entries)} clips under {root} (hash {manifest.corpus_config_hash})")
    print(root / "manifest.json")
    return 0


def cmd_pretrain(args) -> int:
    resolved = _load_config(args)
    _apply_seed(resolved, args.seed)
    chash = cfgmod.config_hash(resolved)
    manifest = _load_manifest(args)
    run_dir = _run_dir(Path(args.out_dir or "runs"), "pretrain", chash)
    _write_run_meta(run_dir, resolved, chash)
    ckpt, log = run_pretrain(
        manifest,
        cfgmod.build_video_config(resolved),
        cfgmod.build_audio_config(resolved),
        cfgmod.build_pretrain_config(resolved),
        out_dir=run_dir,
        config_hash=chash,
    )
    print(f"pretrained {log[-1]['epoch'] + 1} epochs, final loss {log[-1]['mean_loss']:.4f}")
    print(run_dir / "checkpoint.pt")
    return 0


def cmd_finetune(args) -> int:
    resolved = _load_config(args)
    _apply_seed(resolved, args.seed)
    chash = cfgmod.config_hash(resolved)
    manifest = _load_manifest(args)
    pretrained = Checkpoint.load(args.checkpoint) if args.checkpoint else None
    run_dir = _run_dir(Path(args.out_dir or "runs"), "finetune", chash)
    _write_run_meta(run_dir, resolved, chash, {"from_scratch": args.from_scratch})
    video_cfg = cfgmod.build_video_config(resolved) if pretrained is None else None
    ckpt, log = run_finetune(
        pretrained,
        manifest,
        cfgmod.build_finetune_config(resolved),
        video_cfg=video_cfg,
        from_scratch=args.from_scratch,
        out_dir=run_dir,
        config_hash=chash,
    )
    last = log[-1]
    print(f"finetuned {len(log)} epochs, train loss {last['train_loss']:.4f}, val AUC {last['val_auc']}")
    print(run_dir / "checkpoint.pt")
    return 0


def cmd_eval(args) -> int:
    resolved = _load_config(args)
    _apply_seed(resolved, args.seed)
    chash = cfgmod.config_hash(resolved)
    manifest = _load_manifest(args)
    run_dir = _run_dir(Path(args.out_dir or "runs"), "eval", chash)
    _write_run_meta(run_dir, resolved, chash)
    ft_cfg = cfgmod.build_finetune_config(resolved)

    if args.protocol in ("clean", "all"):
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required for the clean protocol")
        ckpt = Checkpoint.load(args.checkpoint)
        model = ckpt.build_video_encoder()
        from .clipfile import ClipStore

        entries = manifest.select(split="test").entries
        scores = score_videos(model, entries, ClipStore(manifest.root), resolved["eval"]["clip_len"])
        scores_to_csv(scores, run_dir / "test_scores.csv", chash)
        cell = _cell(scores)
        (run_dir / "clean_report.json").write_text(
            json.dumps({"protocol": "clean", "cells": {"test": cell}, "config_hash": chash}, indent=2)
        )
        print(f"clean test AUC {cell['auc']:.4f} accuracy {cell['accuracy']:.4f} over {cell['n_videos']} videos")
    if args.protocol in ("loo", "all"):
        pretrained = Checkpoint.load(args.checkpoint_pretrained) if args.checkpoint_pretrained else None
        report = leave_one_out_eval(manifest, pretrained, ft_cfg, out_dir=run_dir / "loo", config_hash=chash)
        print("leave-one-out:", json.dumps(report.cells, indent=2, sort_keys=True))
    if args.protocol in ("cross-renderer", "all"):
        pretrained = Checkpoint.load(args.checkpoint_pretrained) if args.checkpoint_pretrained else None
        report = cross_renderer_eval(manifest, pretrained, ft_cfg, out_dir=run_dir / "xrenderer", config_hash=chash)
        print("cross-renderer:", json.dumps(report.cells, indent=2, sort_keys=True))
    print(run_dir)
    return 0


def cmd_robust(args) -> int:
    resolved = _load_config(args)
    _apply_seed(resolved, args.seed)
    chash = cfgmod.config_hash(resolved)
    manifest = _load_manifest(args)
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    ckpt = Checkpoint.load(args.checkpoint)
    model = ckpt.build_video_encoder()
    run_dir = _run_dir(Path(args.out_dir or "runs"), "robust", chash)
    _write_run_meta(run_dir, resolved, chash)
    report = robustness_eval(
        model,
        manifest,
        resolved["eval"]["clip_len"],
        kinds=resolved["robust"]["kinds"],
        severities=resolved["robust"]["severities"],
        seed=resolved["robust"]["seed"],
        out_dir=run_dir,
        config_hash=chash,
    )
    print(f"robustness grid: {len(report.cells)} cells")
    print(run_dir / "robustness_curves.csv")
    return 0


def cmd_export(args) -> int:
    resolved = _load_config(args)
    chash = cfgmod.config_hash(resolved)
    manifest = _load_manifest(args)
    if not args.checkpoint:
        raise ConfigError("--checkpoint is required")
    ckpt = Checkpoint.load(args.checkpoint)
    run_dir = _run_dir(Path(args.out_dir or "runs"), "export", chash)
    _write_run_meta(run_dir, resolved, chash)
    out = run_dir / f"features_{args.stage}.csv"
    n = export_features(ckpt, manifest, args.stage, out, clip_len=resolved["eval"]["clip_len"], config_hash=chash)
    print(f"exported {n} rows")
    print(out)
    return 0


def _verify_one(path: Path) -> tuple[bool, str]:
    if path.suffix == ".pt":
        ckpt = Checkpoint.load(path)
        return bool(ckpt.config_hash), f"checkpoint stage={ckpt.stage} hash={ckpt.config_hash or '(none)'}"
    doc = json.loads(path.read_text())
    if "corpus_config_hash" in doc and "config" in doc:
        import hashlib

        recomputed = hashlib.sha256(json.dumps(doc["config"], sort_keys=True).encode()).hexdigest()[:16]
        ok = recomputed == doc["corpus_config_hash"]
        return ok, f"manifest hash {doc['corpus_config_hash']} {'OK' if ok else f'!= {recomputed}'}"
    if "config" in doc and "config_hash" in doc:
        ok = cfgmod.config_hash(doc["config"]) == doc["config_hash"]
        return ok, f"config hash {doc['config_hash']} {'OK' if ok else 'MISMATCH'}"
    return False, "no embedded config hash found"


def cmd_verify(args) -> int:
    failures = 0
    for p in args.artifacts:
        path = Path(p)
        try:
            ok, msg = _verify_one(path)
        except Exception as err:  # noqa: BLE001 - report and keep going
            ok, msg = False, f"error: {err}"
        print(f"{'OK  ' if ok else 'FAIL'} {path}: {msg}")
        failures += 0 if ok else 1
    return 1 if failures else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avsf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True, checkpoint=False):
        p.add_argument("--config", help="YAML/JSON config overlay")
        p.add_argument("--profile", choices=cfgmod.PROFILES, help="config profile (default tiny)")
        p.add_argument("--seed", type=int, help="override all stage seeds")
        p.add_argument("--jobs", type=int, default=1, help="worker process cap")
        p.add_argument("--out-dir", help="output directory")
        if manifest:
            p.add_argument("--manifest", required=True, help="corpus manifest.json (or its directory)")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint path")

    p = sub.add_parser("corpus", help="generate the synthetic corpus")
    common(p, manifest=False)
    p.set_defaults(fn=cmd_corpus)

    p = sub.add_parser("pretrain", help="contrastive pre-training")
    common(p)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised fine-tuning")
    common(p, checkpoint=True)
    p.add_argument("--from-scratch", action="store_true", help="skip pre-trained initialization")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="clean / leave-one-out / cross-renderer evaluation")
    common(p, checkpoint=True)
    p.add_argument("--protocol", choices=("clean", "loo", "cross-renderer", "all"), default="clean")
    p.add_argument("--checkpoint-pretrained", help="pretrained checkpoint for protocol fine-tunes")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("robust", help="corruption robustness sweep")
    common(p, checkpoint=True)
    p.set_defaults(fn=cmd_robust)

    p = sub.add_parser("export", help="export per-clip features to CSV")
    common(p, checkpoint=True)
    p.add_argument("--stage", choices=("frontend", "backend"), default="backend")
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("verify", help="re-hash embedded configs in artifacts")
    p.add_argument("artifacts", nargs="+")
    p.set_defaults(fn=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
