"""Evaluation-time corruption harness: four kinds, severities 0..5.

Severity 0 is a bit-exact identity for every kind. Parameter tables are
fixed monotone schedules recorded here; the compression surrogate is
block-DCT quantization (8x8, quality-scaled luminance table), which
reproduces the blocky low-frequency character of codec compression
without a codec dependency.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import gaussian_filter

from .clipfile import ClipStore
from .corpus import CorpusManifest
from .evalkit import MetricsReport, _cell, score_videos
from .video_encoder import VideoEncoder

KINDS = ("GAUSS_BLUR", "BLOCKWISE", "COMPRESSION", "PIXELATION")
SEVERITIES = (0, 1, 2, 3, 4, 5)

GAUSS_BLUR_SIGMA = (0.0, 0.5, 1.0, 2.0, 3.0, 4.0)
PIXELATION_FACTOR = (1, 2, 4, 6, 8, 12)
# (number of blocks per frame, block side in px)
BLOCKWISE_PARAMS = ((0, 0), (2, 4), (4, 6), (6, 8), (9, 10), (12, 12))
# gaps widen toward the harsh end so per-clip mean distortion stays
# monotone (quantization error is not pointwise monotone in quality)
COMPRESSION_QUALITY = (100, 78, 48, 26, 12, 4)

_BLOCK_STREAM = 77

# Standard luminance quantization table (8x8), scaled by quality.
_QUANT_BASE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}; expected one of {KINDS}")
        if self.severity not in SEVERITIES:
            raise ValueError(f"severity must be in 0..5, got {self.severity}")


def _pixelate(clip: np.ndarray, factor: int) -> np.ndarray:
    t, h, w = clip.shape
    ph = (-h) % factor
    pw = (-w) % factor
    padded = np.pad(clip, ((0, 0), (0, ph), (0, pw)), mode="edge")
    hh, ww = padded.shape[1] // factor, padded.shape[2] // factor
    coarse = padded.reshape(t, hh, factor, ww, factor).mean(axis=(2, 4))
    up = np.repeat(np.repeat(coarse, factor, axis=1), factor, axis=2)
    return up[:, :h, :w].astype(np.float32)


def _blockwise(clip: np.ndarray, n_blocks: int, side: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([_BLOCK_STREAM, seed]))
    out = clip.copy()
    t, h, w = clip.shape
    for frame in range(t):
        ys = rng.integers(0, max(h - side, 1), size=n_blocks)
        xs = rng.integers(0, max(w - side, 1), size=n_blocks)
        for y, x in zip(ys, xs):
            out[frame, y : y + side, x : x + side] = 0.5
    return out


def _quant_table(quality: int) -> np.ndarray:
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    q = np.floor((_QUANT_BASE * scale + 50.0) / 100.0)
    return np.clip(q, 1.0, 255.0)


def _dct_quantize(clip: np.ndarray, quality: int) -> np.ndarray:
    t, h, w = clip.shape
    ph = (-h) % 8
    pw = (-w) % 8
    x = np.pad(clip.astype(np.float64), ((0, 0), (0, ph), (0, pw)), mode="edge")
    x = x * 255.0 - 128.0
    hh, ww = x.shape[1] // 8, x.shape[2] // 8
    blocks = x.reshape(t, hh, 8, ww, 8).transpose(0, 1, 3, 2, 4)  # (T, hh, ww, 8, 8)
    coeff = dctn(blocks, axes=(-2, -1), norm="ortho")
    q = _quant_table(quality)
    coeff = np.round(coeff / q) * q
    rec = idctn(coeff, axes=(-2, -1), norm="ortho")
    rec = rec.transpose(0, 1, 3, 2, 4).reshape(t, hh * 8, ww * 8)
    rec = (rec + 128.0) / 255.0
    return np.clip(rec[:, :h, :w], 0.0, 1.0).astype(np.float32)


def apply_corruption(clip: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    """Corrupt a (T, H, W) clip in [0, 1]; deterministic given (clip, spec)."""
    if spec.severity == 0:
        return clip.copy()
    if spec.kind == "GAUSS_BLUR":
        sigma = GAUSS_BLUR_SIGMA[spec.severity]
        out = gaussian_filter(clip.astype(np.float64), sigma=(0.0, sigma, sigma), mode="nearest")
        return np.clip(out, 0.0, 1.0).astype(np.float32)
    if spec.kind == "PIXELATION":
        return _pixelate(clip, PIXELATION_FACTOR[spec.severity])
    if spec.kind == "BLOCKWISE":
        n, side = BLOCKWISE_PARAMS[spec.severity]
        return _blockwise(clip, n, side, spec.seed)
    n_quality = COMPRESSION_QUALITY[spec.severity]
    return _dct_quantize(clip, n_quality)


def robustness_eval(
    model: VideoEncoder,
    manifest: CorpusManifest,
    clip_len: int,
    kinds: Sequence[str] = KINDS,
    severities: Sequence[int] = SEVERITIES,
    seed: int = 0,
    out_dir: str | Path | None = None,
    config_hash: str = "",
) -> MetricsReport:
    """AUC/accuracy per (kind, severity) over the manifest's test split."""
    entries = manifest.select(split="test").entries
    if not entries:
        raise ValueError("manifest has no test entries")
    store = ClipStore(manifest.root)
    cells = {}
    for kind in kinds:
        for severity in severities:
            def transform(frames: np.ndarray, vi: int, _kind=kind, _sev=severity) -> np.ndarray:
                return apply_corruption(frames, CorruptionSpec(_kind, _sev, seed=seed * 100003 + vi))

            scores = score_videos(model, entries, store, clip_len, transform=transform)
            cells[f"{kind}:{severity}"] = _cell(scores)
    report = MetricsReport(
        "robustness",
        cells,
        config_hash,
        [seed],
        {"kinds": list(kinds), "severities": list(severities), "corpus_hash": manifest.corpus_config_hash},
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.save(out_dir / "robustness_report.json")
        with open(out_dir / "robustness_curves.csv", "w", newline="") as fh:
            if config_hash:
                fh.write(f"# config_hash={config_hash}\n")
            writer = csv.writer(fh)
            writer.writerow(["kind", "severity", "auc", "accuracy", "n_videos"])
            for kind in kinds:
                for severity in severities:
                    c = cells[f"{kind}:{severity}"]
                    writer.writerow([kind, severity, f"{c['auc']:.6f}", f"{c['accuracy']:.6f}", c["n_videos"]])
    return report
