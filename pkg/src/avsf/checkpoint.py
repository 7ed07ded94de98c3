"""Self-describing checkpoint container.

Stored via ``torch.save`` as a plain dict of primitives and tensors:
stage tag, config fingerprint, encoder configs, named parameter tensors,
freeze mask, and training provenance. Values round-trip bit-exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import torch

from .audio_encoder import AudioEncoder, AudioEncoderConfig
from .errors import StageError
from .video_encoder import VideoEncoder, VideoEncoderConfig

FORMAT = "avsf-checkpoint/1"
STAGE_PRETRAINED = "pretrained"
STAGE_FINETUNED = "finetuned"


@dataclass
class Checkpoint:
    stage: str
    config_hash: str
    video_config: dict
    audio_config: dict | None
    video_state: dict[str, torch.Tensor]
    audio_state: dict[str, torch.Tensor] | None
    freeze_mask: dict[str, bool] = field(default_factory=dict)
    provenance: dict[str, Any] = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        doc = {
            "format": FORMAT,
            "stage": self.stage,
            "config_hash": self.config_hash,
            "video_config": self.video_config,
            "audio_config": self.audio_config,
            "video_state": self.video_state,
            "audio_state": self.audio_state,
            "freeze_mask": self.freeze_mask,
            "provenance": self.provenance,
        }
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        torch.save(doc, path)

    @staticmethod
    def load(path: str | Path) -> "Checkpoint":
        doc = torch.load(path, map_location="cpu", weights_only=True)
        if doc.get("format") != FORMAT:
            raise ValueError(f"{path}: not a recognized checkpoint (format={doc.get('format')!r})")
        return Checkpoint(
            stage=doc["stage"],
            config_hash=doc["config_hash"],
            video_config=doc["video_config"],
            audio_config=doc["audio_config"],
            video_state=doc["video_state"],
            audio_state=doc["audio_state"],
            freeze_mask=doc["freeze_mask"],
            provenance=doc["provenance"],
        )

    # -- reconstruction ------------------------------------------------------
    def video_encoder_config(self) -> VideoEncoderConfig:
        d = dict(self.video_config)
        d["frontend_channels"] = tuple(d["frontend_channels"])
        return VideoEncoderConfig(**d)

    def audio_encoder_config(self) -> AudioEncoderConfig:
        if self.audio_config is None:
            raise StageError("checkpoint carries no audio encoder")
        d = dict(self.audio_config)
        d["conv_channels"] = tuple(d["conv_channels"])
        d["conv_strides"] = tuple(d["conv_strides"])
        return AudioEncoderConfig(**d)

    def build_video_encoder(self) -> VideoEncoder:
        """Reconstruct the stored video encoder exactly (head structure inferred)."""
        model = VideoEncoder(
            self.video_encoder_config(),
            with_projection=any(k.startswith("projection.") for k in self.video_state),
            with_classifier=any(k.startswith("classifier.") for k in self.video_state),
        )
        model.load_state_dict(self.video_state)
        return model

    def build_audio_encoder(self) -> AudioEncoder:
        if self.audio_state is None:
            raise StageError("checkpoint carries no audio encoder")
        model = AudioEncoder(self.audio_encoder_config())
        model.load_state_dict(self.audio_state)
        return model


def require_stage(ckpt: Checkpoint, stage: str) -> None:
    if ckpt.stage != stage:
        raise StageError(f"expected a {stage!r} checkpoint, got {ckpt.stage!r}")


def state_dict_cpu(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone().cpu() for k, v in module.state_dict().items()}


def config_as_dict(cfg) -> dict:
    d = asdict(cfg)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d
