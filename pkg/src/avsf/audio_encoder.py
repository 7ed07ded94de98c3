"""Waveform encoder: strided 1D conv token extractor, then the shared
temporal transformer backend. Conv layers use kernel 3*stride with padding
equal to the stride, so the token count is exactly floor(samples / stride)
per layer and floor(samples / stride_product) overall."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, StateError
from .temporal import ProjectionHead, TemporalTransformer


@dataclass(frozen=True)
class AudioEncoderConfig:
    conv_channels: tuple[int, ...] = (16, 32, 32)
    conv_strides: tuple[int, ...] = (8, 8, 10)
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    head_dim: int = 16
    ff_dim: int = 128
    dropout: float = 0.1
    max_seq_len: int = 64
    pool_tokens: int = 1
    proj_dim: int = 64
    conv_frozen: bool = False

    @property
    def samples_per_token(self) -> int:
        return math.prod(self.conv_strides)

    def __post_init__(self):
        if len(self.conv_channels) != len(self.conv_strides):
            raise ConfigError("conv_channels and conv_strides must have equal length")
        if self.n_heads * self.head_dim != self.d_model:
            raise ConfigError(
                f"n_heads * head_dim must equal d_model: {self.n_heads} * {self.head_dim} != {self.d_model}"
            )
        spt = self.samples_per_token
        if 640 % spt != 0 and spt % 640 != 0:
            raise ConfigError(
                f"stride product {spt} must be commensurate with the 640-sample frame grid"
            )


class AudioEncoder(nn.Module):
    def __init__(self, cfg: AudioEncoderConfig, with_projection: bool = True):
        super().__init__()
        self.cfg = cfg
        layers = []
        in_ch = 1
        for out_ch, stride in zip(cfg.conv_channels, cfg.conv_strides):
            layers.append(nn.Conv1d(in_ch, out_ch, 3 * stride, stride=stride, padding=stride, bias=False))
            layers.append(nn.GroupNorm(min(8, out_ch), out_ch))
            layers.append(nn.GELU())
            in_ch = out_ch
        self.conv_layers = nn.Sequential(*layers)
        self.backend = TemporalTransformer(
            cfg.conv_channels[-1],
            cfg.d_model,
            cfg.n_layers,
            cfg.n_heads,
            cfg.ff_dim,
            cfg.dropout,
            cfg.max_seq_len,
            cfg.pool_tokens,
        )
        self.projection = ProjectionHead(cfg.pool_tokens, cfg.d_model, cfg.proj_dim) if with_projection else None

    def conv_parameter_names(self) -> list[str]:
        return [n for n, _ in self.named_parameters() if n.startswith("conv_layers.")]

    def _conv_features(self, wave: torch.Tensor) -> torch.Tensor:
        if wave.ndim == 1:
            wave = wave[None]
        if wave.shape[-1] < self.cfg.samples_per_token:
            raise ValueError(
                f"wave has {wave.shape[-1]} samples; need at least {self.cfg.samples_per_token} for one token"
            )
        feats = self.conv_layers(wave[:, None, :])  # (B, C, M)
        return feats.transpose(1, 2)  # (B, M, C)

    def wave_frontend(self, wave: torch.Tensor) -> torch.Tensor:
        """(B, S) waveform -> (B, floor(S / stride_product), d_model) tokens."""
        return self.backend.input_proj(self._conv_features(wave))

    def embed(self, wave: torch.Tensor, valid_len: torch.Tensor | None = None) -> torch.Tensor:
        """Unit-norm contrastive embedding z_a."""
        if self.projection is None:
            raise StateError("encoder was built without a projection head")
        tokens = self.backend(self._conv_features(wave), valid_len)
        return self.projection(self.backend.pool(tokens, valid_len))

    def forward(self, wave: torch.Tensor) -> torch.Tensor:
        return self.embed(wave)
