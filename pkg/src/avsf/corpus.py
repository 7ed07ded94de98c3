"""Deterministic synthetic talking-lips corpus.

Real clips pair a rendered mouth (an ellipse whose vertical aperture
tracks the per-frame mean of a synthetic speech envelope) with a
harmonic-tone waveform amplitude-modulated by the same envelope.
Forgery families break one kind of coherence each:

* ``DESYNC``  -- frames re-rendered from an independent envelope, so lip
  motion no longer matches the audio (the stored wave is the original).
* ``SHUFFLE`` -- frame order permuted inside fixed-size windows.
* ``JITTER``  -- i.i.d. per-frame aperture noise added before rendering,
  destroying temporal smoothness.

Every operation is a pure function of its arguments including seeds, so
corpora rebuild byte-identically from (config, master seed).
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from .clipfile import write_clip

SAMPLE_RATE = 16000
FPS = 25
SAMPLES_PER_FRAME = SAMPLE_RATE // FPS  # 640

REAL = "REAL"
FAKE_FAMILIES = ("DESYNC", "SHUFFLE", "JITTER")
FAMILIES = (REAL,) + FAKE_FAMILIES
SPLITS = ("train", "val", "test")

# Disjoint rng stream tags so envelope noise, renderer nuisance and
# forgery perturbations never share draws even for equal seeds.
_ENVELOPE_STREAM = 101
_RENDER_STREAM = 202
_FAKE_STREAM = 303

# Seeds for consecutive master seeds must not collide; corpora allocate
# sequential envelope seeds starting at master_seed * _SEED_STRIDE.
_SEED_STRIDE = 10_000_000


# ---------------------------------------------------------------------------
# envelopes


@dataclass(frozen=True)
class EnvelopeConfig:
    """Shape of the synthetic speech-energy envelope."""

    smooth_ms: float = 40.0          # Gaussian smoothing of the seed noise
    gap_rate_hz: float = 0.6         # expected silent gaps per second
    gap_len_ms: tuple[float, float] = (120.0, 350.0)
    gap_ramp_ms: float = 80.0        # half-cosine ramp on each gap edge
    env_max_slope: float = 0.01      # bound on |first difference|


@dataclass(frozen=True)
class Envelope:
    samples: np.ndarray
    duration_s: float


def gen_envelope(duration_s: float, seed: int, cfg: EnvelopeConfig = EnvelopeConfig()) -> Envelope:
    """Low-pass-filtered seeded noise in [0, 1] with smooth silent gaps."""
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    n = round(SAMPLE_RATE * duration_s)
    rng = np.random.default_rng(np.random.SeedSequence([_ENVELOPE_STREAM, int(seed)]))
    sigma = cfg.smooth_ms / 1000.0 * SAMPLE_RATE
    env = gaussian_filter1d(rng.standard_normal(n), sigma, mode="reflect")
    lo, hi = env.min(), env.max()
    env = (env - lo) / max(hi - lo, 1e-12)

    n_gaps = rng.poisson(cfg.gap_rate_hz * duration_s)
    ramp = max(int(cfg.gap_ramp_ms / 1000.0 * SAMPLE_RATE), 1)
    for _ in range(n_gaps):
        center = rng.uniform(0, n)
        half = 0.5 * rng.uniform(*cfg.gap_len_ms) / 1000.0 * SAMPLE_RATE
        idx = np.arange(n)
        # distance outside the flat zero region, scaled into [0, 1] over the ramp
        d = (np.abs(idx - center) - half) / ramp
        gate = 0.5 - 0.5 * np.cos(np.pi * np.clip(d, 0.0, 1.0))
        env = env * gate
    return Envelope(np.clip(env, 0.0, 1.0), duration_s)


def frame_env_means(samples: np.ndarray, n_frames: int) -> np.ndarray:
    """Mean envelope over each frame-aligned window of 640 samples."""
    return samples[: n_frames * SAMPLES_PER_FRAME].reshape(n_frames, SAMPLES_PER_FRAME).mean(axis=1)


# ---------------------------------------------------------------------------
# renderer


@dataclass(frozen=True)
class RendererConfig:
    renderer_id: str
    frame_hw: int = 96
    bg_level: float = 0.60
    texture_strength: float = 0.06
    texture_grain: float = 2.5       # blur sigma of nuisance texture at 96 px
    jitter_frac: float = 0.02        # static per-clip mouth offset, fraction of H
    brightness_range: float = 0.06
    aperture_noise: float = 0.008    # per-frame renderer noise on the aperture
    mouth_y_frac: float = 0.52
    half_width_frac: float = 0.22
    lip_thickness_frac: float = 0.045
    min_half_aperture_frac: float = 0.010
    max_half_aperture_frac: float = 0.160
    mouth_value: float = 0.06
    lip_value: float = 0.32
    edge_frac: float = 0.25
    f0_range: tuple[float, float] = (80.0, 200.0)


_RENDERER_PRESETS: dict[str, dict] = {
    # smooth skin-like background, faint texture
    "matte": dict(bg_level=0.62, texture_strength=0.045, texture_grain=3.2, lip_value=0.30),
    # darker, high-frequency grain: a different nuisance statistic
    "grainy": dict(bg_level=0.50, texture_strength=0.120, texture_grain=1.1, lip_value=0.36),
}

DEFAULT_RENDERERS = tuple(_RENDERER_PRESETS)


def renderer_config(renderer_id: str, frame_hw: int = 96) -> RendererConfig:
    try:
        preset = _RENDERER_PRESETS[renderer_id]
    except KeyError:
        raise ValueError(f"unknown renderer_id {renderer_id!r}; known: {sorted(_RENDERER_PRESETS)}") from None
    return RendererConfig(renderer_id=renderer_id, frame_hw=frame_hw, **preset)


@dataclass(frozen=True)
class _ClipParams:
    dx: float
    dy: float
    brightness: float
    texture: np.ndarray
    f0: float
    phases: np.ndarray
    aperture_noise: np.ndarray


def _clip_params(seed: int, rc: RendererConfig, n_frames: int) -> _ClipParams:
    rng = np.random.default_rng(np.random.SeedSequence([_RENDER_STREAM, int(seed)]))
    h = rc.frame_hw
    j = rc.jitter_frac * h
    dx, dy = rng.uniform(-j, j, size=2)
    brightness = rng.uniform(-rc.brightness_range, rc.brightness_range)
    texture = gaussian_filter(rng.standard_normal((h, h)), sigma=rc.texture_grain * h / 96.0)
    texture *= rc.texture_strength
    f0 = rng.uniform(*rc.f0_range)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    ap_noise = rng.standard_normal(n_frames)
    return _ClipParams(dx, dy, brightness, texture, f0, phases, ap_noise)


def _aperture_series(env: Envelope, params: _ClipParams, rc: RendererConfig, n_frames: int) -> np.ndarray:
    base = frame_env_means(env.samples, n_frames)
    return np.clip(base + rc.aperture_noise * params.aperture_noise, 0.0, 1.0)


def _raster(aperture: np.ndarray, params: _ClipParams, rc: RendererConfig) -> np.ndarray:
    """Draw the mouth ellipse for each frame over the static nuisance base."""
    h = rc.frame_hw
    yy, xx = np.mgrid[0:h, 0:h].astype(np.float64)
    cx = h / 2.0 + params.dx
    cy = rc.mouth_y_frac * h + params.dy
    half_w = rc.half_width_frac * h
    lip = rc.lip_thickness_frac * h
    span = rc.max_half_aperture_frac - rc.min_half_aperture_frac
    half_h = (rc.min_half_aperture_frac + aperture * span) * h  # (T,)
    half_h = half_h[:, None, None]

    d_in = ((xx - cx) / half_w) ** 2 + ((yy - cy) / half_h) ** 2
    d_lip = ((xx - cx) / (half_w + lip)) ** 2 + ((yy - cy) / (half_h + lip)) ** 2
    m_in = np.clip((1.0 - d_in) / rc.edge_frac, 0.0, 1.0)
    m_lip = np.clip((1.0 - d_lip) / rc.edge_frac, 0.0, 1.0)

    base = rc.bg_level + params.brightness + params.texture
    frames = base[None, :, :] * (1.0 - m_lip) + rc.lip_value * m_lip
    frames = frames * (1.0 - m_in) + rc.mouth_value * m_in
    return np.clip(frames, 0.0, 1.0).astype(np.float32)


def _carrier(params: _ClipParams, n_samples: int) -> np.ndarray:
    t = np.arange(n_samples) / SAMPLE_RATE
    weights = (1.0, 0.5, 0.25)
    c = np.zeros(n_samples)
    for k, (w, phi) in enumerate(zip(weights, params.phases), start=1):
        c += w * np.sin(2.0 * np.pi * k * params.f0 * t + phi)
    return c / np.max(np.abs(c))


# ---------------------------------------------------------------------------
# clips


@dataclass
class AVPair:
    """Synchronized clip: T x H x W frames in [0,1] plus a 640*T wave in [-1,1]."""

    frames: np.ndarray
    wave: np.ndarray
    fps: int
    sample_rate: int
    seed: int
    renderer_id: str


@dataclass
class LabeledVideo:
    frames: np.ndarray
    label: int               # 0 = real, 1 = fake
    family: str
    renderer_id: str
    seed: int


def _validated_frame_count(duration_s: float) -> int:
    n_frames_f = duration_s * FPS
    n_frames = round(n_frames_f)
    if abs(n_frames_f - n_frames) > 1e-6:
        raise ValueError(f"duration_s={duration_s} is not a multiple of 1/{FPS} s")
    if n_frames < 5:
        raise ValueError(f"clip must have at least 5 frames, got {n_frames}")
    return n_frames


def render_real_pair(
    duration_s: float,
    seed: int,
    renderer: RendererConfig,
    env_cfg: EnvelopeConfig = EnvelopeConfig(),
) -> AVPair:
    """Render a synchronized real clip from (duration, seed, renderer)."""
    n_frames = _validated_frame_count(duration_s)
    env = gen_envelope(duration_s, seed, env_cfg)
    params = _clip_params(seed, renderer, n_frames)
    aperture = _aperture_series(env, params, renderer, n_frames)
    frames = _raster(aperture, params, renderer)
    wave = (0.95 * env.samples * _carrier(params, len(env.samples))).astype(np.float32)
    return AVPair(frames, wave, FPS, SAMPLE_RATE, seed, renderer.renderer_id)


def rendered_aperture(
    duration_s: float,
    seed: int,
    renderer: RendererConfig,
    env_cfg: EnvelopeConfig = EnvelopeConfig(),
) -> np.ndarray:
    """Per-frame aperture series the renderer would draw for this clip."""
    n_frames = _validated_frame_count(duration_s)
    env = gen_envelope(duration_s, seed, env_cfg)
    params = _clip_params(seed, renderer, n_frames)
    return _aperture_series(env, params, renderer, n_frames)


def aperture_proxy(frames: np.ndarray) -> np.ndarray:
    """Model-free per-frame openness proxy: mean intensity drops as the mouth opens."""
    return frames.mean(axis=(1, 2))


@dataclass(frozen=True)
class FakeConfig:
    shuffle_window: int = 10
    jitter_sigma: float = 0.30


_DESYNC_MAX_CORR = 0.4
_DESYNC_MAX_TRIES = 64


def _desynced_envelope(
    orig_seed: int,
    duration_s: float,
    n_frames: int,
    rng: np.random.Generator,
    env_cfg: EnvelopeConfig,
) -> Envelope:
    """Independent envelope whose frame-level motion stays decorrelated from
    the original's (|corr| < 0.4); smooth envelopes can correlate > 0.5 by
    chance, which would leave the clip effectively in sync."""
    orig = frame_env_means(gen_envelope(duration_s, orig_seed, env_cfg).samples, n_frames)
    for _ in range(_DESYNC_MAX_TRIES):
        env = gen_envelope(duration_s, int(rng.integers(0, 2**62)), env_cfg)
        cand = frame_env_means(env.samples, n_frames)
        denom = orig.std() * cand.std()
        corr = 0.0 if denom == 0 else float(np.corrcoef(orig, cand)[0, 1])
        if abs(corr) < _DESYNC_MAX_CORR:
            return env
    raise RuntimeError("could not draw a decorrelated envelope; check envelope config")


def make_fake(
    pair: AVPair,
    family: str,
    seed: int,
    fake_cfg: FakeConfig = FakeConfig(),
    env_cfg: EnvelopeConfig = EnvelopeConfig(),
) -> LabeledVideo:
    """Derive a forged video from a real pair; only temporal/motion structure changes."""
    if family == REAL:
        raise ValueError("make_fake requires a fake family, got REAL")
    if family not in FAKE_FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAKE_FAMILIES}")

    n_frames = pair.frames.shape[0]
    rc = renderer_config(pair.renderer_id, frame_hw=pair.frames.shape[1])
    rng = np.random.default_rng(np.random.SeedSequence([_FAKE_STREAM, int(seed)]))

    if family == "SHUFFLE":
        frames = pair.frames.copy()
        w = max(int(fake_cfg.shuffle_window), 1)
        order = np.arange(n_frames)
        for start in range(0, n_frames, w):
            stop = min(start + w, n_frames)
            order[start:stop] = start + rng.permutation(stop - start)
        frames = frames[order]
    else:
        duration_s = n_frames / FPS
        params = _clip_params(pair.seed, rc, n_frames)
        if family == "DESYNC":
            env = _desynced_envelope(pair.seed, duration_s, n_frames, rng, env_cfg)
            aperture = _aperture_series(env, params, rc, n_frames)
        else:  # JITTER
            env = gen_envelope(duration_s, pair.seed, env_cfg)
            aperture = _aperture_series(env, params, rc, n_frames)
            aperture = np.clip(aperture + fake_cfg.jitter_sigma * rng.standard_normal(n_frames), 0.0, 1.0)
        frames = _raster(aperture, params, rc)

    return LabeledVideo(frames, 1, family, pair.renderer_id, pair.seed)


# ---------------------------------------------------------------------------
# corpus build


@dataclass(frozen=True)
class SplitSpec:
    n_real: int
    n_fake_per_family: int


@dataclass(frozen=True)
class CorpusConfig:
    root: str
    train: SplitSpec = SplitSpec(64, 0)
    val: SplitSpec = SplitSpec(16, 0)
    test: SplitSpec = SplitSpec(16, 0)
    families: tuple[str, ...] = FAKE_FAMILIES
    renderers: tuple[str, ...] = DEFAULT_RENDERERS
    duration_s: float = 2.0
    master_seed: int = 0
    profile: str = "tiny"            # tiny -> 48 px frames, paper -> 96 px
    envelope: EnvelopeConfig = field(default_factory=EnvelopeConfig)
    fake: FakeConfig = field(default_factory=FakeConfig)

    @property
    def frame_hw(self) -> int:
        return {"tiny": 48, "paper": 96}[self.profile]

    def split(self, name: str) -> SplitSpec:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    family: str
    split: str
    renderer_id: str
    seed: int


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry]
    corpus_config_hash: str
    config: dict
    profile: str
    root: Path | None = None

    def select(
        self,
        split: str | None = None,
        families: tuple[str, ...] | list[str] | None = None,
        renderers: tuple[str, ...] | list[str] | None = None,
        label: int | None = None,
    ) -> "CorpusManifest":
        """Filtered view sharing this manifest's root and provenance."""
        kept = [
            e
            for e in self.entries
            if (split is None or e.split == split)
            and (families is None or e.family in families)
            and (renderers is None or e.renderer_id in renderers)
            and (label is None or e.label == label)
        ]
        return CorpusManifest(kept, self.corpus_config_hash, self.config, self.profile, self.root)

    def to_json(self) -> str:
        doc = {
            "format": "avsf-corpus/1",
            "profile": self.profile,
            "corpus_config_hash": self.corpus_config_hash,
            "config": self.config,
            "entries": [asdict(e) for e in self.entries],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path: str | Path) -> "CorpusManifest":
        doc = json.loads(Path(path).read_text())
        entries = [ManifestEntry(**e) for e in doc["entries"]]
        return CorpusManifest(
            entries, doc["corpus_config_hash"], doc["config"], doc["profile"], Path(path).parent
        )


def corpus_config_dict(cfg: CorpusConfig) -> dict:
    """Generation-relevant config as plain data; excludes the output root."""
    d = asdict(cfg)
    d.pop("root")
    return d


def corpus_config_hash(cfg: CorpusConfig) -> str:
    payload = json.dumps(corpus_config_dict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _validate_corpus_config(cfg: CorpusConfig) -> None:
    if not cfg.families or any(f not in FAKE_FAMILIES for f in cfg.families):
        raise ValueError(f"families must be a non-empty subset of {FAKE_FAMILIES}, got {cfg.families}")
    if not cfg.renderers:
        raise ValueError("at least one renderer_id is required")
    for r in cfg.renderers:
        renderer_config(r)  # raises on unknown ids
    if cfg.profile not in ("tiny", "paper"):
        raise ValueError(f"profile must be 'tiny' or 'paper', got {cfg.profile!r}")
    for name in SPLITS:
        spec = cfg.split(name)
        if spec.n_real < 0 or spec.n_fake_per_family < 0:
            raise ValueError(f"{name}: clip counts must be non-negative")
    n_fake_train = cfg.train.n_fake_per_family * len(cfg.families)
    if cfg.train.n_real != n_fake_train:
        raise ValueError(
            "train split must be label-balanced: "
            f"n_real={cfg.train.n_real} but fakes total {n_fake_train} "
            f"({cfg.train.n_fake_per_family} x {len(cfg.families)} families)"
        )
    _validated_frame_count(cfg.duration_s)


@dataclass(frozen=True)
class _ClipTask:
    split: str
    family: str
    seed: int
    renderer_id: str
    rel_path: str


def _plan_corpus(cfg: CorpusConfig) -> list[_ClipTask]:
    tasks = []
    next_seed = cfg.master_seed * _SEED_STRIDE
    for split in SPLITS:
        spec = cfg.split(split)
        groups = [(REAL, spec.n_real)] + [(f, spec.n_fake_per_family) for f in cfg.families]
        for family, count in groups:
            for i in range(count):
                seed = next_seed
                next_seed += 1
                renderer_id = cfg.renderers[i % len(cfg.renderers)]
                rel = f"{split}/{family.lower()}_{renderer_id}_{seed}.avsf"
                tasks.append(_ClipTask(split, family, seed, renderer_id, rel))
    return tasks


def _build_one(args: tuple[_ClipTask, dict]) -> dict:
    task, ctx = args
    cfg: CorpusConfig = ctx["cfg"]
    rc = renderer_config(task.renderer_id, frame_hw=cfg.frame_hw)
    pair = render_real_pair(cfg.duration_s, task.seed, rc, cfg.envelope)
    if task.family == REAL:
        frames, label = pair.frames, 0
    else:
        fake = make_fake(pair, task.family, task.seed, cfg.fake, cfg.envelope)
        frames, label = fake.frames, 1
    out = Path(cfg.root) / task.rel_path
    write_clip(out, frames, pair.wave)
    return dict(
        path=task.rel_path,
        label=label,
        family=task.family,
        split=task.split,
        renderer_id=task.renderer_id,
        seed=task.seed,
    )


def build_corpus(cfg: CorpusConfig, jobs: int = 1) -> CorpusManifest:
    """Generate all clips plus ``manifest.json`` under ``cfg.root``."""
    _validate_corpus_config(cfg)
    root = Path(cfg.root)
    for split in SPLITS:
        (root / split).mkdir(parents=True, exist_ok=True)

    tasks = _plan_corpus(cfg)
    ctx = {"cfg": cfg}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_build_one, [(t, ctx) for t in tasks], chunksize=8))
    else:
        rows = [_build_one((t, ctx)) for t in tasks]

    entries = [ManifestEntry(**row) for row in rows]
    seen: dict[str, set[int]] = {}
    for e in entries:
        seen.setdefault(e.split, set()).add(e.seed)
    for a in SPLITS:
        for b in SPLITS:
            if a < b and seen.get(a, set()) & seen.get(b, set()):
                raise RuntimeError(f"internal error: envelope seeds shared between {a} and {b}")

    manifest = CorpusManifest(
        entries, corpus_config_hash(cfg), corpus_config_dict(cfg), cfg.profile, root
    )
    manifest.save(root / "manifest.json")
    return manifest


def with_root(cfg: CorpusConfig, root: str | Path) -> CorpusConfig:
    return replace(cfg, root=str(root))
