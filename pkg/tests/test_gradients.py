"""Finite-difference verification of autograd through every layer.

Tiny double-precision encoders (d_model 16, 6 frames of 16x16, one token
of audio per frame) keep the central-difference sweep well under the
5-minute budget while still covering each parameter tensor.
"""

import numpy as np
import pytest
import torch

from avsf.audio_encoder import AudioEncoder
from avsf.contrastive import info_nce
from avsf.finetune import bce_loss
from avsf.video_encoder import VideoEncoder

from _oracles import fd_check_params
from conftest import tiny_audio_config, tiny_video_config

TOL = 1e-4


@pytest.fixture(scope="module")
def tiny_pair():
    torch.manual_seed(7)
    video = VideoEncoder(tiny_video_config(), with_classifier=True).double()
    audio = AudioEncoder(tiny_audio_config()).double()
    video.eval()
    audio.eval()
    g = torch.Generator().manual_seed(3)
    clip = torch.rand(2, 6, 16, 16, generator=g, dtype=torch.float64)
    wave = torch.rand(2, 640 * 6, generator=g, dtype=torch.float64) * 2 - 1
    return video, audio, clip, wave


def test_bce_head_gradients(tiny_pair):
    video, _, clip, _ = tiny_pair
    labels = torch.tensor([1.0, 0.0], dtype=torch.float64)

    def loss_fn():
        return bce_loss(video.classify_clip(clip), labels)

    report = fd_check_params(video.classifier.named_parameters(), loss_fn, h=1e-5, max_coords=8)
    worst = max(report.values())
    assert worst < TOL, report


def test_full_encoder_gradients_against_finite_differences(tiny_pair):
    video, audio, clip, wave = tiny_pair

    def loss_fn():
        return info_nce(video.embed(clip), audio.embed(wave), 0.1)[0]

    named = [(f"video.{n}", p) for n, p in video.named_parameters() if not n.startswith("classifier.")]
    named += [(f"audio.{n}", p) for n, p in audio.named_parameters()]
    report = fd_check_params(named, loss_fn, h=1e-5, max_coords=4, seed=1)
    worst_name = max(report, key=report.get)
    assert report[worst_name] < TOL, (worst_name, report[worst_name])


def test_classifier_path_gradients_cover_backend(tiny_pair):
    video, _, clip, _ = tiny_pair
    labels = torch.tensor([0.0, 1.0], dtype=torch.float64)

    def loss_fn():
        return bce_loss(video.classify_clip(clip), labels)

    named = [(n, p) for n, p in video.named_parameters() if not n.startswith("projection.")]
    report = fd_check_params(named, loss_fn, h=1e-5, max_coords=3, seed=2)
    worst_name = max(report, key=report.get)
    assert report[worst_name] < TOL, (worst_name, report[worst_name])
