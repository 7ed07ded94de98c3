"""Run configuration: profile defaults, structured-text overlays, hashing.

A resolved config is a plain nested dict with every field present; its
sha256 prefix is embedded in every artifact a run produces so the
``verify`` subcommand can confirm provenance later.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import yaml

from .audio_encoder import AudioEncoderConfig
from .corpus import CorpusConfig, EnvelopeConfig, FakeConfig, SplitSpec
from .errors import ConfigError
from .finetune import FinetuneConfig
from .pretrain import AugmentConfig, PretrainConfig
from .video_encoder import VideoEncoderConfig

PROFILES = ("tiny", "paper")


def default_run_config(profile: str = "tiny") -> dict:
    if profile not in PROFILES:
        raise ConfigError(f"profile must be one of {PROFILES}, got {profile!r}")
    tiny = profile == "tiny"
    video = dict(
        frontend_channels=[8, 16, 32] if tiny else [64, 128, 256, 512],
        resnet_blocks_per_stage=1 if tiny else 2,
        frontend_out_dim=32 if tiny else 512,
        d_model=64 if tiny else 1024,
        n_layers=2 if tiny else 6,
        n_heads=4 if tiny else 8,
        head_dim=16 if tiny else 128,
        ff_dim=128 if tiny else 2048,
        dropout=0.1 if tiny else 0.2,
        max_seq_len=64,
        pool_tokens=1,
        proj_dim=64 if tiny else 256,
        input_hw=44 if tiny else 88,
    )
    audio = dict(
        conv_channels=[16, 32, 32] if tiny else [64, 128, 256, 512, 512],
        conv_strides=[8, 8, 10] if tiny else [5, 4, 4, 4, 2],
        d_model=video["d_model"],
        n_layers=video["n_layers"],
        n_heads=video["n_heads"],
        head_dim=video["head_dim"],
        ff_dim=video["ff_dim"],
        dropout=video["dropout"],
        max_seq_len=64,
        pool_tokens=1,
        proj_dim=video["proj_dim"],
        conv_frozen=False,
    )
    augment = dict(
        crop_hw=video["input_hw"],
        blur_max_len=5,
        noise_sigma=[0.0, 0.03],
        brightness=0.10,
    )
    return {
        "profile": profile,
        "corpus": dict(
            train=dict(n_real=96, n_fake_per_family=32),
            val=dict(n_real=24, n_fake_per_family=8),
            test=dict(n_real=48, n_fake_per_family=16),
            families=["DESYNC", "SHUFFLE", "JITTER"],
            renderers=["matte", "grainy"],
            duration_s=2.0,
            master_seed=0,
            envelope=dict(
                smooth_ms=40.0,
                gap_rate_hz=0.6,
                gap_len_ms=[120.0, 350.0],
                gap_ramp_ms=80.0,
                env_max_slope=0.01,
            ),
            fake=dict(shuffle_window=10, jitter_sigma=0.30),
        ),
        "video": video,
        "audio": audio,
        "pretrain": dict(
            clip_len=50,
            batch_size=8,
            lr0=0.01,
            lr_decay_per_epoch=0.9,
            lr_floor=0.0001,
            plateau_epochs=3,
            plateau_min_delta=1e-4,
            max_epochs=100 if not tiny else 30,
            weight_decay=0.01,
            grad_clip=5.0,
            temperature=0.1,
            seed=0,
            augment=dict(augment),
        ),
        "finetune": dict(
            clip_len=25,
            head_lr=0.01,
            last_layer_lr=0.005,
            layer_decay=0.9,
            batch_size=8,
            epochs=10,
            weight_decay=0.01,
            grad_clip=5.0,
            seed=0,
            freeze_frontend=True,
            select_best_val=True,
            augment=dict(augment),
        ),
        "eval": dict(clip_len=25),
        "robust": dict(
            kinds=["GAUSS_BLUR", "BLOCKWISE", "COMPRESSION", "PIXELATION"],
            severities=[0, 1, 2, 3, 4, 5],
            seed=0,
        ),
    }


def _deep_merge(base: dict, overlay: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in overlay.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected a mapping")
            out[key] = _deep_merge(base[key], value, here)
        else:
            out[key] = value
    return out


def load_run_config(path: str | Path | None = None, profile: str | None = None) -> dict:
    """Resolve profile defaults plus an optional YAML/JSON overlay file."""
    overlay = {}
    if path is not None:
        text = Path(path).read_text()
        if str(path).endswith(".json"):
            overlay = json.loads(text)
        else:
            overlay = yaml.safe_load(text) or {}
        if not isinstance(overlay, dict):
            raise ConfigError(f"{path}: config must be a mapping at the top level")
    profile = profile or overlay.get("profile") or "tiny"
    base = default_run_config(profile)
    overlay.pop("profile", None)
    resolved = _deep_merge(base, overlay)
    resolved["profile"] = profile
    return resolved


def config_hash(resolved: dict) -> str:
    return hashlib.sha256(json.dumps(resolved, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# dict -> dataclass builders


def build_corpus_config(resolved: dict, root: str | Path) -> CorpusConfig:
    c = resolved["corpus"]
    return CorpusConfig(
        root=str(root),
        train=SplitSpec(**c["train"]),
        val=SplitSpec(**c["val"]),
        test=SplitSpec(**c["test"]),
        families=tuple(c["families"]),
        renderers=tuple(c["renderers"]),
        duration_s=c["duration_s"],
        master_seed=c["master_seed"],
        profile=resolved["profile"],
        envelope=EnvelopeConfig(
            smooth_ms=c["envelope"]["smooth_ms"],
            gap_rate_hz=c["envelope"]["gap_rate_hz"],
            gap_len_ms=tuple(c["envelope"]["gap_len_ms"]),
            gap_ramp_ms=c["envelope"]["gap_ramp_ms"],
            env_max_slope=c["envelope"]["env_max_slope"],
        ),
        fake=FakeConfig(**c["fake"]),
    )


def build_video_config(resolved: dict) -> VideoEncoderConfig:
    v = dict(resolved["video"])
    v["frontend_channels"] = tuple(v["frontend_channels"])
    return VideoEncoderConfig(**v)


def build_audio_config(resolved: dict) -> AudioEncoderConfig:
    a = dict(resolved["audio"])
    a["conv_channels"] = tuple(a["conv_channels"])
    a["conv_strides"] = tuple(a["conv_strides"])
    return AudioEncoderConfig(**a)


def _build_augment(d: dict) -> AugmentConfig:
    a = dict(d)
    a["noise_sigma"] = tuple(a["noise_sigma"])
    return AugmentConfig(**a)


def build_pretrain_config(resolved: dict, seed: int | None = None) -> PretrainConfig:
    p = dict(resolved["pretrain"])
    p["augment"] = _build_augment(p["augment"])
    if seed is not None:
        p["seed"] = seed
    return PretrainConfig(**p)


def build_finetune_config(resolved: dict, seed: int | None = None) -> FinetuneConfig:
    f = dict(resolved["finetune"])
    f["augment"] = _build_augment(f["augment"])
    if seed is not None:
        f["seed"] = seed
    return FinetuneConfig(**f)
