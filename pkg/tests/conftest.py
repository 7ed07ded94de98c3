import numpy as np
import pytest
import torch

from avsf.audio_encoder import AudioEncoderConfig
from avsf.corpus import CorpusConfig, SplitSpec, build_corpus
from avsf.video_encoder import VideoEncoderConfig

torch.manual_seed(0)


def tiny_video_config(**overrides) -> VideoEncoderConfig:
    """Smallest config that still exercises every architectural piece."""
    base = dict(
        frontend_channels=(4, 8),
        resnet_blocks_per_stage=1,
        frontend_out_dim=8,
        d_model=16,
        n_layers=1,
        n_heads=2,
        head_dim=8,
        ff_dim=32,
        dropout=0.0,
        max_seq_len=16,
        pool_tokens=1,
        proj_dim=8,
        input_hw=16,
    )
    base.update(overrides)
    return VideoEncoderConfig(**base)


def tiny_audio_config(**overrides) -> AudioEncoderConfig:
    base = dict(
        conv_channels=(8, 8),
        conv_strides=(16, 40),
        d_model=16,
        n_layers=1,
        n_heads=2,
        head_dim=8,
        ff_dim=32,
        dropout=0.0,
        max_seq_len=16,
        pool_tokens=1,
        proj_dim=8,
        conv_frozen=False,
    )
    base.update(overrides)
    return AudioEncoderConfig(**base)


def unit_rows(b: int, d: int, seed: int = 0, dtype=torch.float64) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(b, d, generator=g, dtype=dtype)
    return z / z.norm(dim=1, keepdim=True)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Shared 48-clip corpus: enough structure for every protocol test."""
    root = tmp_path_factory.mktemp("corpus")
    cfg = CorpusConfig(
        root=str(root),
        train=SplitSpec(n_real=12, n_fake_per_family=4),
        val=SplitSpec(n_real=6, n_fake_per_family=2),
        test=SplitSpec(n_real=6, n_fake_per_family=2),
        duration_s=2.0,
        master_seed=3,
        profile="tiny",
    )
    manifest = build_corpus(cfg)
    return cfg, manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
