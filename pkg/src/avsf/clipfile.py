"""Binary container for synchronized clip files.

Layout (little-endian): magic ``AVSF``, version u16, then T, H, W, fps,
sample_rate as u32, followed by T*H*W float32 frame values (row-major)
and (sample_rate // fps) * T float32 wave samples.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"AVSF"
VERSION = 1

_HEADER = struct.Struct("<4sHIIIII")


def write_clip(
    path: str | Path,
    frames: np.ndarray,
    wave: np.ndarray,
    fps: int = 25,
    sample_rate: int = 16000,
) -> None:
    frames = np.ascontiguousarray(frames, dtype=np.float32)
    wave = np.ascontiguousarray(wave, dtype=np.float32)
    if frames.ndim != 3:
        raise ValueError(f"frames must be (T, H, W), got shape {frames.shape}")
    t, h, w = frames.shape
    spf = sample_rate // fps
    if sample_rate % fps != 0:
        raise ValueError("sample_rate must be a multiple of fps")
    if wave.shape != (spf * t,):
        raise ValueError(f"wave must have {spf * t} samples, got {wave.shape}")
    header = _HEADER.pack(MAGIC, VERSION, t, h, w, fps, sample_rate)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frames.tobytes())
        fh.write(wave.tobytes())


def read_clip(path: str | Path) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Read a clip file, returning (frames, wave, fps, sample_rate)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, t, h, w, fps, sample_rate = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    n_frame = t * h * w
    n_wave = (sample_rate // fps) * t
    expected = _HEADER.size + 4 * (n_frame + n_wave)
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    frames = body[:n_frame].reshape(t, h, w)
    wave = body[n_frame:]
    return frames, wave, fps, sample_rate


class ClipStore:
    """Read-through cache of decoded clips, keyed by path relative to a root.

    Arrays are returned read-only; callers that mutate must copy first.
    The cache stops admitting new entries once ``max_bytes`` is reached
    (decoded clips are small enough that simple admission control beats
    eviction bookkeeping here).
    """

    def __init__(self, root: str | Path, max_bytes: int = 4_000_000_000):
        self.root = Path(root)
        self.max_bytes = max_bytes
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self._bytes = 0

    def get(self, rel_path: str) -> tuple[np.ndarray, np.ndarray]:
        hit = self._cache.get(rel_path)
        if hit is not None:
            return hit
        frames, wave, _, _ = read_clip(self.root / rel_path)
        frames.flags.writeable = False
        wave.flags.writeable = False
        size = frames.nbytes + wave.nbytes
        if self._bytes + size <= self.max_bytes:
            self._cache[rel_path] = (frames, wave)
            self._bytes += size
        return frames, wave

    def __len__(self) -> int:
        return len(self._cache)
