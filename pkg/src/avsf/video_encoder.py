"""Two-stage video encoder.

Frontend: a 3D convolution with kernel (5, 7, 7) and temporal stride 1
(temporal receptive radius 2, so frame count is preserved) followed by a
per-frame 2D residual network ending in global spatial average pooling.
All frontend normalization is per-frame GroupNorm: no running statistics,
so frozen parameters imply frozen behavior, and no cross-frame coupling.

Backend: linear projection, learnable positional embeddings, temporal
transformer, masked adaptive average pooling to a fixed token count, and
either a projection head (contrastive stage) or a classifier head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigError, ShapeError, StateError
from .temporal import ClassifierHead, ProjectionHead, TemporalTransformer

MIN_CLIP_FRAMES = 5  # 3D conv temporal kernel size


@dataclass(frozen=True)
class VideoEncoderConfig:
    frontend_channels: tuple[int, ...] = (8, 16, 32)
    resnet_blocks_per_stage: int = 1
    frontend_out_dim: int = 32
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    head_dim: int = 16
    ff_dim: int = 128
    dropout: float = 0.1
    max_seq_len: int = 64
    pool_tokens: int = 1
    proj_dim: int = 64
    input_hw: int = 44

    def __post_init__(self):
        if self.n_heads * self.head_dim != self.d_model:
            raise ConfigError(
                f"n_heads * head_dim must equal d_model: {self.n_heads} * {self.head_dim} != {self.d_model}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.frontend_out_dim != self.frontend_channels[-1]:
            raise ConfigError(
                f"frontend_out_dim {self.frontend_out_dim} must equal the last stage width "
                f"{self.frontend_channels[-1]}"
            )
        if self.pool_tokens < 1 or self.max_seq_len < 1:
            raise ConfigError("pool_tokens and max_seq_len must be >= 1")


def _group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class _ResBlock2d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.norm1 = _group_norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.norm2 = _group_norm(out_ch)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), _group_norm(out_ch)
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        h = self.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return self.relu(h + self.shortcut(x))


def _motion_stem_init(stem: nn.Conv3d) -> None:
    """Start half the stem filters as temporal-derivative Gaussian blobs.

    The stem is the only cross-frame operator, so frame-rate motion energy
    must surface here; random init biases features toward appearance, which
    starves the downstream order-insensitive pooling of motion cues. All
    filters remain trainable.
    """
    w = stem.weight  # (C, 1, 5, 7, 7)
    c0 = w.shape[0]
    kt, kh, kw = w.shape[2:]
    ys, xs = torch.meshgrid(torch.arange(kh), torch.arange(kw), indexing="ij")
    temporal_profiles = torch.tensor(
        [
            [0.0, -1.0, 0.0, 1.0, 0.0],  # central difference
            [0.0, 0.0, -1.0, 1.0, 0.0],  # adjacent difference
            [-1.0, 0.0, 0.0, 0.0, 1.0],  # radius-2 difference
        ]
    )
    with torch.no_grad():
        for c in range(c0 // 2):
            cy = torch.rand(()) * (kh - 3) + 1
            cx = torch.rand(()) * (kw - 3) + 1
            sigma = torch.rand(()) * 1.5 + 0.8
            blob = torch.exp(-(((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma**2)))
            blob = blob / blob.norm()
            profile = temporal_profiles[int(torch.randint(len(temporal_profiles), ()))]
            profile = profile / profile.norm()
            w[c, 0] = 0.3 * profile[:, None, None] * blob[None]


class VideoFrontend(nn.Module):
    """(B, T, H, W) grayscale clips -> (B, T, N) per-frame local motion features."""

    def __init__(self, cfg: VideoEncoderConfig):
        super().__init__()
        self.cfg = cfg
        c0 = cfg.frontend_channels[0]
        self.stem = nn.Conv3d(1, c0, (5, 7, 7), stride=(1, 2, 2), padding=(2, 3, 3), bias=False)
        _motion_stem_init(self.stem)
        self.stem_norm = _group_norm(c0)
        self.pool = nn.MaxPool3d((1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1))
        blocks = []
        in_ch = c0
        for stage, out_ch in enumerate(cfg.frontend_channels):
            for b in range(cfg.resnet_blocks_per_stage):
                stride = 2 if (stage > 0 and b == 0) else 1
                blocks.append(_ResBlock2d(in_ch, out_ch, stride))
                in_ch = out_ch
        self.stages = nn.Sequential(*blocks)
        self.relu = nn.ReLU(inplace=True)

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        if clip.ndim != 4:
            raise ShapeError(f"expected (B, T, H, W) clip, got shape {tuple(clip.shape)}")
        b, t, h, w = clip.shape
        if t < MIN_CLIP_FRAMES:
            raise ValueError(f"clip must have at least {MIN_CLIP_FRAMES} frames, got {t}")
        if h != self.cfg.input_hw or w != self.cfg.input_hw:
            raise ShapeError(f"expected {self.cfg.input_hw}x{self.cfg.input_hw} frames, got {h}x{w}")
        x = self.stem(clip[:, None])  # (B, C, T, H', W')
        # normalize each frame independently to keep the temporal receptive
        # field exactly the conv kernel's
        bsz, c, t2, hh, ww = x.shape
        x = x.transpose(1, 2).reshape(bsz * t2, c, hh, ww)
        x = self.relu(self.stem_norm(x))
        x = x.reshape(bsz, t2, c, hh, ww).transpose(1, 2)
        x = self.pool(x)
        bsz, c, t2, hh, ww = x.shape
        x = x.transpose(1, 2).reshape(bsz * t2, c, hh, ww)
        x = self.stages(x)
        x = x.mean(dim=(2, 3))
        return x.reshape(b, t, -1)


class VideoEncoder(nn.Module):
    def __init__(
        self,
        cfg: VideoEncoderConfig,
        with_projection: bool = True,
        with_classifier: bool = False,
    ):
        super().__init__()
        self.cfg = cfg
        self.frontend = VideoFrontend(cfg)
        self.backend = TemporalTransformer(
            cfg.frontend_out_dim,
            cfg.d_model,
            cfg.n_layers,
            cfg.n_heads,
            cfg.ff_dim,
            cfg.dropout,
            cfg.max_seq_len,
            cfg.pool_tokens,
        )
        self.projection = ProjectionHead(cfg.pool_tokens, cfg.d_model, cfg.proj_dim) if with_projection else None
        self.classifier = ClassifierHead(cfg.pool_tokens, cfg.d_model) if with_classifier else None

    # -- stages -----------------------------------------------------------
    def frontend_forward(self, clip: torch.Tensor) -> torch.Tensor:
        return self.frontend(clip)

    def pooled(self, features: torch.Tensor, valid_len: torch.Tensor | None = None) -> torch.Tensor:
        tokens = self.backend(features, valid_len)
        return self.backend.pool(tokens, valid_len)

    def backend_forward(self, features: torch.Tensor, valid_len: torch.Tensor | None = None) -> torch.Tensor:
        """Frame features -> unit-norm contrastive embedding z_v."""
        if self.projection is None:
            raise StateError("encoder was built without a projection head")
        return self.projection(self.pooled(features, valid_len))

    def embed(self, clip: torch.Tensor, valid_len: torch.Tensor | None = None) -> torch.Tensor:
        return self.backend_forward(self.frontend(clip), valid_len)

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        return self.embed(clip)

    # -- classification ----------------------------------------------------
    def classify_pooled(self, pooled: torch.Tensor) -> torch.Tensor:
        if self.classifier is None:
            raise StateError("no classifier head: checkpoint is contrastive-only")
        return self.classifier(pooled)

    def classify_clip(self, clip: torch.Tensor) -> torch.Tensor:
        return self.classify_pooled(self.pooled(self.frontend(clip)))

    # -- parameter grouping --------------------------------------------------
    def frontend_parameter_names(self) -> list[str]:
        return [n for n, _ in self.named_parameters() if n.startswith("frontend.")]

    def transformer_layer_parameters(self) -> list[list[tuple[str, nn.Parameter]]]:
        """Named parameters grouped per transformer layer, front to back."""
        groups = []
        for i, layer in enumerate(self.backend.encoder.layers):
            prefix = f"backend.encoder.layers.{i}."
            groups.append([(prefix + n, p) for n, p in layer.named_parameters()])
        return groups
