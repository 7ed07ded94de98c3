"""Self-supervised contrastive pre-training loop.

Each step samples a batch of synchronized clip segments at per-item random
frame offsets, applies one image-augmentation draw per clip (identical on
every frame of the clip), encodes both modalities and optimizes the
symmetric InfoNCE loss with decoupled-weight-decay AdamW. Per-item rng
streams derive from (seed, epoch, item index), so results never depend on
how batch assembly is scheduled.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import convolve1d

from . import checkpoint as ckpt_mod
from .audio_encoder import AudioEncoder, AudioEncoderConfig
from .clipfile import ClipStore
from .contrastive import batch_retrieval_accuracy, info_nce
from .corpus import REAL, SAMPLES_PER_FRAME, CorpusManifest
from .video_encoder import VideoEncoder, VideoEncoderConfig

_OFFSET_STREAM = 11
_AUGMENT_STREAM = 22
_ORDER_STREAM = 33


@dataclass(frozen=True)
class AugmentConfig:
    crop_hw: int = 44
    blur_max_len: int = 5                     # motion blur kernel length (odd), 1 disables
    noise_sigma: tuple[float, float] = (0.0, 0.03)
    brightness: float = 0.10


@dataclass(frozen=True)
class PretrainConfig:
    clip_len: int = 50
    batch_size: int = 8
    lr0: float = 0.01
    lr_decay_per_epoch: float = 0.9
    lr_floor: float = 0.0001
    plateau_epochs: int = 3
    plateau_min_delta: float = 1e-4
    max_epochs: int = 100
    weight_decay: float = 0.01
    grad_clip: float = 5.0
    temperature: float = 0.1
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if not (self.lr0 >= self.lr_floor > 0):
            raise ValueError("must have lr0 >= lr_floor > 0")
        if self.plateau_epochs < 1:
            raise ValueError("plateau_epochs must be >= 1")


def lr_at_epoch(cfg: PretrainConfig, epoch: int) -> float:
    return max(cfg.lr0 * cfg.lr_decay_per_epoch**epoch, cfg.lr_floor)


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    current_lr: float = 0.0
    best_loss: float = float("inf")
    epochs_since_best: int = 0


# ---------------------------------------------------------------------------
# sampling and augmentation


def sample_segment(
    frames: np.ndarray, wave: np.ndarray, clip_len: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform-offset synchronized segment: frames [o, o+L) and wave [640o, 640(o+L))."""
    t = frames.shape[0]
    if t < clip_len:
        raise ValueError(f"clip has {t} frames, need at least {clip_len}")
    offset = int(rng.integers(0, t - clip_len + 1))
    s = offset * SAMPLES_PER_FRAME
    return frames[offset : offset + clip_len], wave[s : s + clip_len * SAMPLES_PER_FRAME]


def augment_clip(clip: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """One augmentation draw per clip, applied identically to every frame.

    Noise is the exception by design: sigma is drawn once per clip but the
    realization is i.i.d. per frame and pixel.
    """
    t, h, w = clip.shape
    c = cfg.crop_hw
    if c > h or c > w:
        raise ValueError(f"crop {c} larger than frame {h}x{w}")
    oy = int(rng.integers(0, h - c + 1))
    ox = int(rng.integers(0, w - c + 1))
    out = clip[:, oy : oy + c, ox : ox + c]

    lengths = np.arange(1, max(cfg.blur_max_len, 1) + 1, 2)
    blur_len = int(rng.choice(lengths))
    axis = int(rng.integers(1, 3))  # 1 = vertical streak, 2 = horizontal
    kernel = np.full(blur_len, 1.0 / blur_len, dtype=clip.dtype)
    out = convolve1d(out, kernel, axis=axis, mode="nearest")

    sigma = float(rng.uniform(*cfg.noise_sigma))
    out = out + sigma * rng.standard_normal(out.shape).astype(clip.dtype)
    out = out + clip.dtype.type(rng.uniform(-cfg.brightness, cfg.brightness))
    return np.clip(out, 0.0, 1.0)


def center_crop(clip: np.ndarray, size: int) -> np.ndarray:
    t, h, w = clip.shape
    oy, ox = (h - size) // 2, (w - size) // 2
    return clip[:, oy : oy + size, ox : ox + size]


def _item_rng(stream: int, seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([stream, seed, epoch, index]))


def _to_tensor(arrays: list[np.ndarray]) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.stack(arrays))).float()


# ---------------------------------------------------------------------------
# training loop


def _assemble_batch(
    items: list[tuple[np.ndarray, np.ndarray]],
    indices: list[int],
    cfg: PretrainConfig,
    epoch: int,
) -> tuple[torch.Tensor, torch.Tensor]:
    clips, waves = [], []
    for idx in indices:
        frames, wave = items[idx]
        rng_off = _item_rng(_OFFSET_STREAM, cfg.seed, epoch, idx)
        seg_frames, seg_wave = sample_segment(frames, wave, cfg.clip_len, rng_off)
        rng_aug = _item_rng(_AUGMENT_STREAM, cfg.seed, epoch, idx)
        clips.append(augment_clip(seg_frames, rng_aug, cfg.augment))
        waves.append(seg_wave)
    return _to_tensor(clips), _to_tensor(waves)


def _eval_batches(
    items: list[tuple[np.ndarray, np.ndarray]], cfg: PretrainConfig
) -> list[tuple[torch.Tensor, torch.Tensor]]:
    """Deterministic evaluation batches: offset 0, center crop, no augmentation."""
    batches = []
    b = cfg.batch_size
    for start in range(0, len(items) - b + 1, b):
        clips, waves = [], []
        for frames, wave in items[start : start + b]:
            clips.append(center_crop(frames[: cfg.clip_len], cfg.augment.crop_hw))
            waves.append(wave[: cfg.clip_len * SAMPLES_PER_FRAME])
        batches.append((_to_tensor(clips), _to_tensor(waves)))
    return batches


def _load_items(manifest: CorpusManifest, store: ClipStore, clip_len: int) -> list[tuple[np.ndarray, np.ndarray]]:
    items = []
    for e in manifest.entries:
        frames, wave = store.get(e.path)
        if frames.shape[0] < clip_len:
            raise ValueError(f"{e.path}: {frames.shape[0]} frames < clip_len {clip_len}")
        items.append((frames, wave))
    return items


@torch.no_grad()
def _retrieval(video: VideoEncoder, audio: AudioEncoder, batches) -> tuple[float | None, float | None]:
    if not batches:
        return None, None
    video.eval()
    audio.eval()
    v2a_all, a2v_all = [], []
    for clips, waves in batches:
        v2a, a2v = batch_retrieval_accuracy(video.embed(clips), audio.embed(waves))
        v2a_all.append(v2a)
        a2v_all.append(a2v)
    return float(np.mean(v2a_all)), float(np.mean(a2v_all))


def run_pretrain(
    manifest: CorpusManifest,
    video_cfg: VideoEncoderConfig,
    audio_cfg: AudioEncoderConfig,
    cfg: PretrainConfig,
    out_dir: str | Path | None = None,
    config_hash: str = "",
    store: ClipStore | None = None,
) -> tuple[ckpt_mod.Checkpoint, list[dict]]:
    """Pre-train both encoders on the real clips of the manifest's train split.

    Returns the checkpoint and the per-epoch log records; when ``out_dir``
    is given also writes ``checkpoint.pt`` and ``train_log.jsonl`` there.
    """
    if video_cfg.proj_dim != audio_cfg.proj_dim:
        raise ValueError("video and audio projection dims must match")
    if manifest.root is None:
        raise ValueError("manifest has no root directory")
    store = store or ClipStore(manifest.root)
    train_manifest = manifest.select(split="train", families=(REAL,))
    if not train_manifest.entries:
        raise ValueError("train split has no real clips")
    items = _load_items(train_manifest, store, cfg.clip_len)
    val_manifest = manifest.select(split="val", families=(REAL,))
    val_items = _load_items(val_manifest, store, cfg.clip_len) if val_manifest.entries else []
    val_batches = _eval_batches(val_items, cfg)

    torch.manual_seed(cfg.seed)
    video = VideoEncoder(video_cfg, with_projection=True)
    audio = AudioEncoder(audio_cfg, with_projection=True)
    params = list(video.parameters())
    frozen_names = set()
    if audio_cfg.conv_frozen:
        frozen_names = set(audio.conv_parameter_names())
        for n, p in audio.named_parameters():
            if n in frozen_names:
                p.requires_grad_(False)
    params += [p for n, p in audio.named_parameters() if n not in frozen_names]
    opt = torch.optim.AdamW(params, lr=cfg.lr0, weight_decay=cfg.weight_decay)

    state = TrainState()
    log: list[dict] = []
    b = cfg.batch_size
    for epoch in range(cfg.max_epochs):
        t0 = time.monotonic()
        state.epoch = epoch
        state.current_lr = lr_at_epoch(cfg, epoch)
        for group in opt.param_groups:
            group["lr"] = state.current_lr

        order = _item_rng(_ORDER_STREAM, cfg.seed, epoch, 0).permutation(len(items))
        video.train()
        audio.train()
        losses = []
        for start in range(0, len(order) - b + 1, b):
            idx = [int(i) for i in order[start : start + b]]
            clips, waves = _assemble_batch(items, idx, cfg, epoch)
            loss, _ = info_nce(video.embed(clips), audio.embed(waves), cfg.temperature)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch} step {state.step}: {loss.item()}")
            opt.zero_grad()
            loss.backward()
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            opt.step()
            losses.append(loss.item())
            state.step += 1
        if not losses:
            raise ValueError(f"train split smaller than one batch of {b}")

        mean_loss = float(np.mean(losses))
        v2a, a2v = _retrieval(video, audio, val_batches)
        log.append(
            {
                "epoch": epoch,
                "mean_loss": mean_loss,
                "lr": state.current_lr,
                "retrieval_v2a": v2a,
                "retrieval_a2v": a2v,
                "wall_time_s": time.monotonic() - t0,
            }
        )
        if mean_loss < state.best_loss - cfg.plateau_min_delta:
            state.best_loss = mean_loss
            state.epochs_since_best = 0
        else:
            state.epochs_since_best += 1
            if state.epochs_since_best >= cfg.plateau_epochs:
                break

    freeze_mask = {f"audio.{n}": True for n in frozen_names}
    ckpt = ckpt_mod.Checkpoint(
        stage=ckpt_mod.STAGE_PRETRAINED,
        config_hash=config_hash,
        video_config=ckpt_mod.config_as_dict(video_cfg),
        audio_config=ckpt_mod.config_as_dict(audio_cfg),
        video_state=ckpt_mod.state_dict_cpu(video),
        audio_state=ckpt_mod.state_dict_cpu(audio),
        freeze_mask=freeze_mask,
        provenance={
            "seed": cfg.seed,
            "corpus_hash": manifest.corpus_config_hash,
            "n_train_clips": len(items),
            "epochs_run": state.epoch + 1,
            "final_loss": log[-1]["mean_loss"],
            "pretrain_config": asdict(cfg),
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
