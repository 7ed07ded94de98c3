"""Temporal transformer backend shared by the video and audio encoders."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError


def adaptive_bins(length: int, k: int) -> list[tuple[int, int]]:
    """K contiguous bins covering [0, length).

    For length >= k this is an exact partition with bin sizes differing by
    at most one; shorter sequences fall back to width-1 bins that may
    repeat elements so every bin stays non-empty.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    bins = []
    for i in range(k):
        start = (i * length) // k
        end = ((i + 1) * length) // k
        if end <= start:
            start = min(start, length - 1)
            end = start + 1
        bins.append((start, end))
    return bins


def masked_mean_pool(x: torch.Tensor, valid_len: torch.Tensor, k: int) -> torch.Tensor:
    """Average (B, L, D) tokens into (B, K, D), using only the first valid_len[b] positions."""
    pooled = x.new_empty(x.shape[0], k, x.shape[2])
    for b in range(x.shape[0]):
        for i, (start, end) in enumerate(adaptive_bins(int(valid_len[b]), k)):
            pooled[b, i] = x[b, start:end].mean(dim=0)
    return pooled


class TemporalTransformer(nn.Module):
    """Linear input projection, learnable positional embeddings, transformer stack.

    Padding positions are excluded from attention via a key-padding mask, so
    outputs at valid positions do not depend on how much padding follows.
    """

    def __init__(
        self,
        in_dim: int,
        d_model: int,
        n_layers: int,
        n_heads: int,
        ff_dim: int,
        dropout: float,
        max_seq_len: int,
        pool_tokens: int,
    ):
        super().__init__()
        if not 0.0 <= dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {dropout}")
        self.max_seq_len = max_seq_len
        self.pool_tokens = pool_tokens
        self.input_proj = nn.Linear(in_dim, d_model)
        self.pos_emb = nn.Parameter(0.02 * torch.randn(max_seq_len, d_model))
        layer = nn.TransformerEncoderLayer(
            d_model,
            n_heads,
            dim_feedforward=ff_dim,
            dropout=dropout,
            activation="gelu",
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)

    def _check_lengths(self, seq_len: int, valid_len: torch.Tensor) -> None:
        if seq_len > self.max_seq_len:
            raise ConfigError(f"sequence length {seq_len} exceeds max_seq_len {self.max_seq_len}")
        if (valid_len < 1).any():
            raise ValueError("valid_len must be >= 1 for every item")
        if (valid_len > seq_len).any():
            raise ValueError("valid_len exceeds the padded sequence length")

    def forward(self, features: torch.Tensor, valid_len: torch.Tensor | None = None) -> torch.Tensor:
        """(B, L, in_dim) features -> (B, L, d_model) contextual tokens."""
        b, seq_len, _ = features.shape
        if valid_len is None:
            valid_len = torch.full((b,), seq_len, dtype=torch.long, device=features.device)
        self._check_lengths(seq_len, valid_len)
        x = self.input_proj(features) + self.pos_emb[:seq_len]
        pad = torch.arange(seq_len, device=features.device)[None, :] >= valid_len[:, None]
        return self.encoder(x, src_key_padding_mask=pad)

    def pool(self, tokens: torch.Tensor, valid_len: torch.Tensor | None = None) -> torch.Tensor:
        if valid_len is None:
            valid_len = torch.full((tokens.shape[0],), tokens.shape[1], dtype=torch.long)
        return masked_mean_pool(tokens, valid_len, self.pool_tokens)


class ProjectionHead(nn.Module):
    """Two-layer MLP onto the unit sphere of the shared contrastive space."""

    def __init__(self, pool_tokens: int, d_model: int, proj_dim: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(pool_tokens * d_model, d_model),
            nn.GELU(),
            nn.Linear(d_model, proj_dim),
        )

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        z = self.net(pooled.flatten(start_dim=1))
        return F.normalize(z, dim=-1)


class ClassifierHead(nn.Module):
    """Two-layer MLP emitting one logit; final layer zero-initialized so an
    untrained head scores every clip at probability 0.5."""

    def __init__(self, pool_tokens: int, d_model: int):
        super().__init__()
        self.hidden = nn.Linear(pool_tokens * d_model, d_model)
        self.act = nn.GELU()
        self.out = nn.Linear(d_model, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        h = self.act(self.hidden(pooled.flatten(start_dim=1)))
        return self.out(h).squeeze(-1)
