"""Supervised fine-tuning for motion-irregularity detection.

The pre-trained frontend (3D conv + residual 2D stages) is frozen; the
temporal transformer, positional embeddings, input projection and a fresh
classification head train with per-layer learning rates: the head at
``head_lr``, the last transformer layer at ``last_layer_lr``, and each
earlier layer decayed by ``layer_decay``. The contrastive projection head
is discarded; the classifier pools the last transformer layer's output.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt_mod
from .clipfile import ClipStore
from .corpus import CorpusManifest
from .errors import StageError
from .pretrain import AugmentConfig, _item_rng, _to_tensor, augment_clip, center_crop
from .video_encoder import VideoEncoder, VideoEncoderConfig

_CHUNK_STREAM = 44
_FT_AUGMENT_STREAM = 55
_FT_ORDER_STREAM = 66


@dataclass(frozen=True)
class FinetuneConfig:
    clip_len: int = 25
    head_lr: float = 0.01
    last_layer_lr: float = 0.005
    layer_decay: float = 0.9
    batch_size: int = 8
    epochs: int = 10
    weight_decay: float = 0.01
    grad_clip: float = 5.0
    seed: int = 0
    freeze_frontend: bool = True
    select_best_val: bool = True
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.head_lr <= 0 or self.last_layer_lr <= 0:
            raise ValueError("learning rates must be positive")
        if not 0 < self.layer_decay <= 1:
            raise ValueError("layer_decay must be in (0, 1]")


def layer_lr_schedule(n_layers: int, cfg: FinetuneConfig) -> list[float]:
    """Per-transformer-layer learning rates, front to back."""
    if n_layers < 1:
        raise ValueError(f"n_layers must be >= 1, got {n_layers}")
    return [cfg.last_layer_lr * cfg.layer_decay ** (n_layers - 1 - i) for i in range(n_layers)]


def bce_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Sigmoid negative log-likelihood, logaddexp(0, l) - l*y.

    The log-sum-exp form never overflows and, unlike the piecewise
    max/abs spelling, has the exact gradient sigmoid(l) - y at l = 0,
    where a zero-initialized head starts.
    """
    if not torch.isfinite(logits).all():
        raise ValueError("logits must be finite")
    targets = targets.to(logits.dtype)
    return (torch.logaddexp(torch.zeros_like(logits), logits) - logits * targets).mean()


def build_freeze_mask(model: VideoEncoder, freeze_frontend: bool) -> dict[str, bool]:
    return {n: (freeze_frontend and n.startswith("frontend.")) for n, _ in model.named_parameters()}


def make_param_groups(model: VideoEncoder, cfg: FinetuneConfig, freeze_mask: dict[str, bool]) -> list[dict]:
    """Optimizer groups implementing the per-layer schedule.

    Trainable non-transformer backend parameters (positional embeddings and
    the input projection) take the deepest layer's rate; with an unfrozen
    frontend (from-scratch baseline) the frontend does too.
    """
    schedule = layer_lr_schedule(model.cfg.n_layers, cfg)
    layer_param_ids = {}
    for i, group in enumerate(model.transformer_layer_parameters()):
        for name, p in group:
            layer_param_ids[id(p)] = i

    groups: dict[float, list] = {}
    for name, p in model.named_parameters():
        if freeze_mask.get(name, False):
            continue
        if name.startswith("classifier."):
            lr = cfg.head_lr
        elif id(p) in layer_param_ids:
            lr = schedule[layer_param_ids[id(p)]]
        else:
            lr = schedule[0]
        groups.setdefault(lr, []).append(p)
    return [{"params": ps, "lr": lr} for lr, ps in sorted(groups.items())]


# ---------------------------------------------------------------------------
# data plumbing


def _labeled_items(
    manifest: CorpusManifest, store: ClipStore, clip_len: int
) -> list[tuple[np.ndarray, int]]:
    items = []
    for e in manifest.entries:
        frames, _ = store.get(e.path)
        if frames.shape[0] < clip_len:
            raise ValueError(f"{e.path}: {frames.shape[0]} frames < clip_len {clip_len}")
        items.append((frames, e.label))
    return items


def _train_batch(
    items: list[tuple[np.ndarray, int]],
    indices: list[int],
    cfg: FinetuneConfig,
    epoch: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    clips, labels = [], []
    for idx in indices:
        frames, label = items[idx]
        rng_chunk = _item_rng(_CHUNK_STREAM, cfg.seed, epoch, idx)
        t = frames.shape[0]
        offset = int(rng_chunk.integers(0, t - cfg.clip_len + 1))
        chunk = frames[offset : offset + cfg.clip_len]
        rng_aug = _item_rng(_FT_AUGMENT_STREAM, cfg.seed, epoch, idx)
        clips.append(augment_clip(chunk, rng_aug, cfg.augment))
        labels.append(label)
    return _to_tensor(clips), torch.tensor(labels, dtype=torch.float32)


# ---------------------------------------------------------------------------
# model construction and the loop


def build_finetune_model(
    pretrained: ckpt_mod.Checkpoint | None,
    video_cfg: VideoEncoderConfig | None = None,
    from_scratch: bool = False,
    seed: int = 0,
) -> VideoEncoder:
    """Classifier-headed encoder, initialized from a pre-trained checkpoint
    unless ``from_scratch``; the contrastive projection head is dropped."""
    if from_scratch:
        if video_cfg is None:
            if pretrained is None:
                raise ValueError("from_scratch needs a video config (directly or via a checkpoint)")
            video_cfg = pretrained.video_encoder_config()
        torch.manual_seed(seed)
        return VideoEncoder(video_cfg, with_projection=False, with_classifier=True)

    if pretrained is None:
        raise StageError("fine-tuning requires a pretrained checkpoint (or from_scratch=True)")
    ckpt_mod.require_stage(pretrained, ckpt_mod.STAGE_PRETRAINED)
    video_cfg = pretrained.video_encoder_config()
    torch.manual_seed(seed)
    model = VideoEncoder(video_cfg, with_projection=False, with_classifier=True)
    own = model.state_dict()
    loaded = {k: v for k, v in pretrained.video_state.items() if k in own and not k.startswith("classifier.")}
    own.update(loaded)
    model.load_state_dict(own)
    return model


@torch.no_grad()
def _val_auc(model: VideoEncoder, val_items, cfg: FinetuneConfig) -> float | None:
    from .evalkit import roc_auc  # deferred: evalkit imports this module's loss

    labels = [lab for _, lab in val_items]
    if len(set(labels)) < 2:
        return None
    model.eval()
    scores = []
    crop = cfg.augment.crop_hw
    for frames, _ in val_items:
        n_chunks = frames.shape[0] // cfg.clip_len
        chunks = [
            center_crop(frames[i * cfg.clip_len : (i + 1) * cfg.clip_len], crop)
            for i in range(n_chunks)
        ]
        logits = model.classify_clip(_to_tensor(chunks))
        scores.append(torch.sigmoid(logits).mean().item())
    return roc_auc(scores, labels)


def run_finetune(
    pretrained: ckpt_mod.Checkpoint | None,
    manifest: CorpusManifest,
    cfg: FinetuneConfig,
    video_cfg: VideoEncoderConfig | None = None,
    from_scratch: bool = False,
    out_dir: str | Path | None = None,
    config_hash: str = "",
    store: ClipStore | None = None,
) -> tuple[ckpt_mod.Checkpoint, list[dict]]:
    """Fine-tune on the manifest's labeled train split; validates per epoch.

    With ``select_best_val`` the returned checkpoint carries the weights of
    the best validation-AUC epoch, otherwise the final ones.
    """
    if manifest.root is None:
        raise ValueError("manifest has no root directory")
    store = store or ClipStore(manifest.root)
    train_entries = manifest.select(split="train").entries
    if not train_entries:
        raise ValueError("manifest has no train entries")
    if all(e.label == 0 for e in train_entries):
        raise ValueError("train split has no fake videos; nothing to learn")
    items = _labeled_items(manifest.select(split="train"), store, cfg.clip_len)
    val_view = manifest.select(split="val")
    val_items = _labeled_items(val_view, store, cfg.clip_len) if val_view.entries else []

    model = build_finetune_model(pretrained, video_cfg, from_scratch, seed=cfg.seed)
    freeze = cfg.freeze_frontend and not from_scratch
    freeze_mask = build_freeze_mask(model, freeze)
    for name, p in model.named_parameters():
        if freeze_mask[name]:
            p.requires_grad_(False)
    if freeze:
        model.frontend.eval()
    opt = torch.optim.AdamW(make_param_groups(model, cfg, freeze_mask), weight_decay=cfg.weight_decay)
    trainable = [p for n, p in model.named_parameters() if not freeze_mask[n]]

    log: list[dict] = []
    best = (-math.inf, None)
    b = cfg.batch_size
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.monotonic()
        model.train()
        if freeze:
            model.frontend.eval()
        order = _item_rng(_FT_ORDER_STREAM, cfg.seed, epoch, 0).permutation(len(items))
        losses = []
        for start in range(0, len(order), b):
            idx = [int(i) for i in order[start : start + b]]
            if not idx:
                continue
            clips, labels = _train_batch(items, idx, cfg, epoch)
            logits = model.classify_clip(clips)
            loss = bce_loss(logits, labels)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch} step {step}")
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(trainable, cfg.grad_clip)
            opt.step()
            losses.append(loss.item())
            step += 1

        val_auc = _val_auc(model, val_items, cfg) if val_items else None
        rec = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_auc": val_auc,
            "lr": cfg.head_lr,
            "wall_time_s": time.monotonic() - t0,
        }
        log.append(rec)
        if cfg.select_best_val and val_auc is not None and val_auc > best[0]:
            best = (val_auc, ckpt_mod.state_dict_cpu(model))

    final_state = best[1] if best[1] is not None else ckpt_mod.state_dict_cpu(model)
    ckpt = ckpt_mod.Checkpoint(
        stage=ckpt_mod.STAGE_FINETUNED,
        config_hash=config_hash,
        video_config=ckpt_mod.config_as_dict(model.cfg),
        audio_config=None,
        video_state=final_state,
        audio_state=None,
        freeze_mask=freeze_mask,
        provenance={
            "seed": cfg.seed,
            "corpus_hash": manifest.corpus_config_hash,
            "from_scratch": from_scratch,
            "n_train_videos": len(items),
            "finetune_config": asdict(cfg),
            "best_val_auc": best[0] if best[1] is not None else None,
        },
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt.save(out_dir / "checkpoint.pt")
        with open(out_dir / "train_log.jsonl", "w") as fh:
            for rec in log:
                fh.write(json.dumps(rec) + "\n")
    return ckpt, log
