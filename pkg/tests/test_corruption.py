import numpy as np
import pytest
import torch

from avsf.corpus import render_real_pair, renderer_config
from avsf.corruption import (
    BLOCKWISE_PARAMS,
    COMPRESSION_QUALITY,
    GAUSS_BLUR_SIGMA,
    KINDS,
    PIXELATION_FACTOR,
    CorruptionSpec,
    apply_corruption,
    robustness_eval,
)
from avsf.evalkit import roc_auc, score_videos
from avsf.clipfile import ClipStore
from avsf.video_encoder import VideoEncoder

from conftest import tiny_video_config


def _clip(seed=0, hw=48):
    return render_real_pair(2.0, seed, renderer_config("matte", hw)).frames


def test_severity_zero_is_bit_exact_identity():
    clip = _clip()
    for kind in KINDS:
        out = apply_corruption(clip, CorruptionSpec(kind, 0, seed=5))
        assert np.array_equal(out, clip)
        assert out is not clip


def test_spec_validation():
    with pytest.raises(ValueError, match="kind"):
        CorruptionSpec("FOG", 1)
    with pytest.raises(ValueError, match="severity"):
        CorruptionSpec("GAUSS_BLUR", 6)


def test_pixelation_produces_constant_blocks():
    rng = np.random.default_rng(0)
    clip = rng.random((3, 88, 88)).astype(np.float32)
    out = apply_corruption(clip, CorruptionSpec("PIXELATION", 2))
    assert PIXELATION_FACTOR[2] == 4
    blocks = out.reshape(3, 22, 4, 22, 4)
    assert np.allclose(blocks, blocks[:, :, :1, :, :1], atol=1e-6)


def test_determinism_including_randomized_kind():
    clip = _clip(3)
    for kind in KINDS:
        spec = CorruptionSpec(kind, 3, seed=11)
        assert np.array_equal(apply_corruption(clip, spec), apply_corruption(clip, spec))


def test_blockwise_uses_seed():
    clip = _clip(4)
    a = apply_corruption(clip, CorruptionSpec("BLOCKWISE", 3, seed=1))
    b = apply_corruption(clip, CorruptionSpec("BLOCKWISE", 3, seed=2))
    assert not np.array_equal(a, b)


def test_output_range_clamped():
    clip = _clip(5)
    for kind in KINDS:
        for severity in (1, 3, 5):
            out = apply_corruption(clip, CorruptionSpec(kind, severity, seed=7))
            assert out.min() >= 0.0 and out.max() <= 1.0
            assert out.shape == clip.shape


@pytest.mark.parametrize("kind", ["GAUSS_BLUR", "PIXELATION", "COMPRESSION"])
def test_distortion_monotone_in_severity(kind):
    for seed in range(50):
        clip = _clip(seed)
        dist = [
            np.abs(apply_corruption(clip, CorruptionSpec(kind, s)) - clip).mean()
            for s in range(6)
        ]
        assert all(a <= b + 1e-9 for a, b in zip(dist, dist[1:])), (kind, seed, dist)


def test_severity_tables_monotone():
    assert list(GAUSS_BLUR_SIGMA) == sorted(GAUSS_BLUR_SIGMA)
    assert list(PIXELATION_FACTOR) == sorted(PIXELATION_FACTOR)
    assert list(COMPRESSION_QUALITY) == sorted(COMPRESSION_QUALITY, reverse=True)
    assert [k for k, _ in BLOCKWISE_PARAMS] == sorted(k for k, _ in BLOCKWISE_PARAMS)
    assert [b for _, b in BLOCKWISE_PARAMS] == sorted(b for _, b in BLOCKWISE_PARAMS)


# ---------------------------------------------------------------------------
# sweep harness


def _model(randomize=True):
    torch.manual_seed(1)
    model = VideoEncoder(tiny_video_config(input_hw=44, max_seq_len=64), with_projection=False, with_classifier=True)
    if randomize:
        with torch.no_grad():
            for p in model.classifier.parameters():
                p.add_(torch.randn_like(p) * 0.2)
    return model.eval()


def test_robustness_grid_and_severity_zero_equals_clean(small_corpus, tmp_path):
    _, manifest = small_corpus
    model = _model()
    kinds = ("GAUSS_BLUR", "PIXELATION")
    report = robustness_eval(model, manifest, 25, kinds=kinds, severities=(0, 1, 2), out_dir=tmp_path)
    assert len(report.cells) == len(kinds) * 3
    clean = score_videos(model, manifest.select(split="test").entries, ClipStore(manifest.root), 25)
    clean_auc = roc_auc([s.score for s in clean], [s.label for s in clean])
    for kind in kinds:
        assert abs(report.cells[f"{kind}:0"]["auc"] - clean_auc) <= 1e-9
    assert (tmp_path / "robustness_curves.csv").exists()
    rows = (tmp_path / "robustness_curves.csv").read_text().splitlines()
    assert rows[0].split(",") == ["kind", "severity", "auc", "accuracy", "n_videos"]
    assert len(rows) == 1 + len(kinds) * 3


def test_robustness_requires_test_split(small_corpus, tmp_path):
    _, manifest = small_corpus
    no_test = manifest.select(split="train")
    with pytest.raises(ValueError, match="test"):
        robustness_eval(_model(), no_test, 25)
