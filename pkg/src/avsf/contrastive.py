"""Symmetric cross-modal InfoNCE over in-batch positives/negatives."""

from __future__ import annotations

import torch
import torch.nn.functional as F

DEFAULT_TEMPERATURE = 0.1
_NORM_ATOL = 1e-4


def _validate_batch(zv: torch.Tensor, za: torch.Tensor) -> None:
    if zv.ndim != 2 or za.ndim != 2:
        raise ValueError("embedding batches must be 2D (B, D)")
    if zv.shape != za.shape:
        raise ValueError(f"batch shapes differ: {tuple(zv.shape)} vs {tuple(za.shape)}")
    if zv.shape[0] < 2:
        raise ValueError("need at least 2 pairs for in-batch negatives")
    for name, z in (("video", zv), ("audio", za)):
        err = (z.norm(dim=1) - 1.0).abs().max().item()
        if err > _NORM_ATOL:
            raise ValueError(f"{name} embeddings must be unit-norm (max deviation {err:.2e})")


def info_nce(
    zv: torch.Tensor, za: torch.Tensor, temperature: float = DEFAULT_TEMPERATURE
) -> tuple[torch.Tensor, torch.Tensor]:
    """Average of the video->audio and audio->video contrastive losses.

    Row i of each batch is the positive partner of row i in the other;
    every other in-batch combination is a negative. Returns (loss, logits)
    where logits[i, j] = zv[i] . za[j] / temperature.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    _validate_batch(zv, za)
    logits = zv @ za.T / temperature
    targets = torch.arange(zv.shape[0], device=zv.device)
    loss_va = F.cross_entropy(logits, targets)
    loss_av = F.cross_entropy(logits.T, targets)
    return 0.5 * (loss_va + loss_av), logits


def batch_retrieval_accuracy(zv: torch.Tensor, za: torch.Tensor) -> tuple[float, float]:
    """Top-1 retrieval in both directions; a tied maximum counts as a miss."""
    _validate_batch(zv, za)
    with torch.no_grad():
        sim = zv @ za.T
        b = sim.shape[0]
        diag = sim.diagonal()
        off = sim.clone()
        off.fill_diagonal_(float("-inf"))
        v2a = (diag > off.max(dim=1).values).float().mean().item()
        a2v = (diag > off.max(dim=0).values).float().mean().item()
    return v2a, a2v
