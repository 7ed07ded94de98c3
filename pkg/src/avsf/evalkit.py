"""Video-level scoring, ranking metrics, and the evaluation protocols.

AUC is the Mann-Whitney rank statistic: the probability that a uniformly
random positive outranks a random negative, ties counted one half.
Video scores are the mean sigmoid probability over non-overlapping
fixed-length chunks (the trailing partial chunk is dropped).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import checkpoint as ckpt_mod
from .clipfile import ClipStore
from .corpus import REAL, CorpusManifest, ManifestEntry
from .errors import UndefinedMetricError
from .finetune import FinetuneConfig, run_finetune
from .pretrain import _to_tensor, center_crop
from .video_encoder import VideoEncoder


# ---------------------------------------------------------------------------
# metrics


def _ranks_with_ties(values: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1D sequences")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    ranks = _ranks_with_ties(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(scores) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(((scores >= threshold).astype(int) == labels).mean())


# ---------------------------------------------------------------------------
# video scoring


@dataclass
class VideoScore:
    video_id: str
    score: float
    n_chunks: int
    label: int | None = None
    family: str | None = None
    renderer_id: str | None = None


def _video_chunks(frames: np.ndarray, clip_len: int, crop: int) -> list[np.ndarray]:
    n_chunks = frames.shape[0] // clip_len
    if n_chunks < 1:
        raise ValueError(f"video has {frames.shape[0]} frames, shorter than clip_len {clip_len}")
    return [center_crop(frames[i * clip_len : (i + 1) * clip_len], crop) for i in range(n_chunks)]


@torch.no_grad()
def video_score(model: VideoEncoder, frames: np.ndarray, clip_len: int, video_id: str = "") -> VideoScore:
    model.eval()
    chunks = _video_chunks(frames, clip_len, model.cfg.input_hw)
    logits = model.classify_clip(_to_tensor(chunks))
    return VideoScore(video_id, torch.sigmoid(logits).mean().item(), len(chunks))


@torch.no_grad()
def score_videos(
    model: VideoEncoder,
    entries: Sequence[ManifestEntry],
    store: ClipStore,
    clip_len: int,
    transform: Callable[[np.ndarray, int], np.ndarray] | None = None,
    chunk_batch: int = 32,
) -> list[VideoScore]:
    """Score many videos with chunk-level batching.

    ``transform(frames, video_index)`` is applied to whole videos before
    chunking (corruption hooks use this).
    """
    model.eval()
    crop = model.cfg.input_hw
    chunks: list[np.ndarray] = []
    owner: list[int] = []
    counts = []
    for vi, e in enumerate(entries):
        frames, _ = store.get(e.path)
        if transform is not None:
            frames = transform(np.asarray(frames), vi)
        vid_chunks = _video_chunks(frames, clip_len, crop)
        counts.append(len(vid_chunks))
        chunks.extend(vid_chunks)
        owner.extend([vi] * len(vid_chunks))

    probs = np.empty(len(chunks), dtype=np.float64)
    for start in range(0, len(chunks), chunk_batch):
        batch = _to_tensor(chunks[start : start + chunk_batch])
        logits = model.classify_clip(batch)
        probs[start : start + len(batch)] = torch.sigmoid(logits).numpy()

    owner_arr = np.asarray(owner)
    scores = []
    for vi, e in enumerate(entries):
        p = probs[owner_arr == vi]
        scores.append(VideoScore(e.path, float(p.mean()), counts[vi], e.label, e.family, e.renderer_id))
    return scores


def scores_to_csv(scores: Sequence[VideoScore], path: str | Path, config_hash: str = "") -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["video_id", "label", "family", "renderer", "score"])
        for s in scores:
            writer.writerow([s.video_id, s.label, s.family, s.renderer_id, f"{s.score:.10f}"])


# ---------------------------------------------------------------------------
# reports and protocols


@dataclass
class MetricsReport:
    protocol: str
    cells: dict[str, dict]
    config_hash: str = ""
    seeds: list[int] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "protocol": self.protocol,
                "cells": self.cells,
                "config_hash": self.config_hash,
                "seeds": self.seeds,
                "meta": self.meta,
            },
            indent=2,
            sort_keys=True,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def _cell(scores: Sequence[VideoScore]) -> dict:
    vals = [s.score for s in scores]
    labels = [s.label for s in scores]
    return {
        "auc": roc_auc(vals, labels),
        "accuracy": accuracy(vals, labels),
        "n_videos": len(scores),
    }


def _audit_path(out_dir: Path, name: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / name


def _write_train_audit(path: Path, entries: Sequence[ManifestEntry]) -> None:
    doc = [
        {"path": e.path, "label": e.label, "family": e.family, "renderer_id": e.renderer_id, "seed": e.seed}
        for e in entries
    ]
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))


FinetuneFn = Callable[[CorpusManifest, int], VideoEncoder]


def _default_finetune_fn(pretrained, cfg: FinetuneConfig, from_scratch: bool) -> FinetuneFn:
    def fit(train_manifest: CorpusManifest, seed: int) -> VideoEncoder:
        import dataclasses

        run_cfg = dataclasses.replace(cfg, seed=seed)
        ckpt, _ = run_finetune(pretrained, train_manifest, run_cfg, from_scratch=from_scratch)
        return ckpt.build_video_encoder()

    return fit


def leave_one_out_eval(
    manifest: CorpusManifest,
    pretrained: ckpt_mod.Checkpoint | None,
    cfg: FinetuneConfig,
    families: Sequence[str] | None = None,
    out_dir: str | Path = "loo_runs",
    finetune_fn: FinetuneFn | None = None,
    config_hash: str = "",
) -> MetricsReport:
    """Hold out each forgery family in turn: train on the others, test real
    vs the held-out family. Emits per-run train-manifest audits."""
    present = sorted({e.family for e in manifest.entries if e.family != REAL})
    families = list(families) if families is not None else present
    if len(families) < 2:
        raise ValueError("leave-one-out needs at least 2 fake families")
    for f in families:
        if f not in present:
            raise ValueError(f"family {f!r} not present in corpus (has {present})")

    out_dir = Path(out_dir)
    fit = finetune_fn or _default_finetune_fn(pretrained, cfg, from_scratch=False)
    store = ClipStore(manifest.root)
    cells = {}
    for held_out in families:
        keep = tuple([REAL] + [f for f in families if f != held_out])
        train_manifest = manifest.select(families=keep)
        _write_train_audit(
            _audit_path(out_dir, f"train_manifest_holdout_{held_out}.json"),
            train_manifest.select(split="train").entries,
        )
        model = fit(train_manifest, cfg.seed)
        test_entries = manifest.select(split="test", families=(REAL, held_out)).entries
        cells[held_out] = _cell(score_videos(model, test_entries, store, cfg.clip_len))
    cells["average"] = {
        "auc": float(np.mean([cells[f]["auc"] for f in families])),
        "accuracy": float(np.mean([cells[f]["accuracy"] for f in families])),
        "n_videos": int(sum(cells[f]["n_videos"] for f in families)),
    }
    report = MetricsReport(
        "leave_one_out",
        cells,
        config_hash,
        [cfg.seed],
        {"families": families, "corpus_hash": manifest.corpus_config_hash},
    )
    report.save(_audit_path(out_dir, "report.json"))
    return report


def cross_renderer_eval(
    manifest: CorpusManifest,
    pretrained: ckpt_mod.Checkpoint | None,
    cfg: FinetuneConfig,
    out_dir: str | Path = "xrenderer_runs",
    finetune_fn: FinetuneFn | None = None,
    config_hash: str = "",
) -> MetricsReport:
    """Train on the first renderer only; report AUC on each renderer's test set."""
    renderers = sorted({e.renderer_id for e in manifest.entries})
    if len(renderers) < 2:
        raise ValueError("cross-renderer evaluation needs at least 2 renderer_ids")
    train_renderer, *others = renderers

    out_dir = Path(out_dir)
    fit = finetune_fn or _default_finetune_fn(pretrained, cfg, from_scratch=False)
    store = ClipStore(manifest.root)
    train_manifest = manifest.select(renderers=(train_renderer,))
    _write_train_audit(
        _audit_path(out_dir, f"train_manifest_{train_renderer}.json"),
        train_manifest.select(split="train").entries,
    )
    model = fit(train_manifest, cfg.seed)
    cells = {}
    for r in renderers:
        test_entries = manifest.select(split="test", renderers=(r,)).entries
        tag = "in_domain" if r == train_renderer else "cross_domain"
        cells[f"{tag}:{r}"] = _cell(score_videos(model, test_entries, store, cfg.clip_len))
    report = MetricsReport(
        "cross_renderer",
        cells,
        config_hash,
        [cfg.seed],
        {"train_renderer": train_renderer, "test_renderers": renderers, "corpus_hash": manifest.corpus_config_hash},
    )
    report.save(_audit_path(out_dir, "report.json"))
    return report


# ---------------------------------------------------------------------------
# feature export


@torch.no_grad()
def export_features(
    ckpt: ckpt_mod.Checkpoint,
    manifest: CorpusManifest,
    stage: str,
    out_path: str | Path,
    clip_len: int = 25,
    corruption_tag: str = "clean",
    transform: Callable[[np.ndarray, int], np.ndarray] | None = None,
    config_hash: str = "",
) -> int:
    """Per-clip feature vectors -> CSV. ``stage`` selects 'frontend' (mean
    per-frame local feature, dim N) or 'backend' (flattened pooled tokens,
    dim K * d_model). Returns the row count."""
    if stage not in ("frontend", "backend"):
        raise ValueError(f"stage must be 'frontend' or 'backend', got {stage!r}")
    model = ckpt.build_video_encoder()
    model.eval()
    store = ClipStore(manifest.root)
    crop = model.cfg.input_hw
    rows = 0
    with open(out_path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        dim = model.cfg.frontend_out_dim if stage == "frontend" else model.cfg.pool_tokens * model.cfg.d_model
        writer.writerow(["video_id", "label", "family", "renderer", "corruption"] + [f"f{i}" for i in range(dim)])
        for vi, e in enumerate(manifest.entries):
            frames, _ = store.get(e.path)
            if transform is not None:
                frames = transform(np.asarray(frames), vi)
            clip = center_crop(frames[: (frames.shape[0] // clip_len) * clip_len or clip_len], crop)
            clip_t = _to_tensor([clip[:clip_len]])
            feats = model.frontend_forward(clip_t)
            if stage == "frontend":
                vec = feats[0].mean(dim=0)
            else:
                vec = model.pooled(feats)[0].flatten()
            writer.writerow(
                [e.path, e.label, e.family, e.renderer_id, corruption_tag]
                + [f"{v:.8e}" for v in vec.numpy()]
            )
            rows += 1
    return rows
