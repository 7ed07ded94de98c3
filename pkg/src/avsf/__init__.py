"""Audio-visual self-supervised pre-training and motion-irregularity
video forensics on a deterministic synthetic talking-lips corpus."""

from .audio_encoder import AudioEncoder, AudioEncoderConfig
from .checkpoint import Checkpoint
from .contrastive import batch_retrieval_accuracy, info_nce
from .corpus import (
    AVPair,
    CorpusConfig,
    CorpusManifest,
    Envelope,
    LabeledVideo,
    build_corpus,
    gen_envelope,
    make_fake,
    render_real_pair,
)
from .corruption import CorruptionSpec, apply_corruption, robustness_eval
from .evalkit import MetricsReport, accuracy, cross_renderer_eval, leave_one_out_eval, roc_auc, video_score
from .finetune import FinetuneConfig, bce_loss, layer_lr_schedule, run_finetune
from .pretrain import AugmentConfig, PretrainConfig, augment_clip, run_pretrain, sample_segment
from .video_encoder import VideoEncoder, VideoEncoderConfig

__version__ = "0.1.0"

__all__ = [
    "AVPair",
    "AudioEncoder",
    "AudioEncoderConfig",
    "AugmentConfig",
    "Checkpoint",
    "CorpusConfig",
    "CorpusManifest",
    "CorruptionSpec",
    "Envelope",
    "FinetuneConfig",
    "LabeledVideo",
    "MetricsReport",
    "PretrainConfig",
    "VideoEncoder",
    "VideoEncoderConfig",
    "accuracy",
    "apply_corruption",
    "augment_clip",
    "batch_retrieval_accuracy",
    "bce_loss",
    "build_corpus",
    "cross_renderer_eval",
    "gen_envelope",
    "info_nce",
    "layer_lr_schedule",
    "leave_one_out_eval",
    "make_fake",
    "render_real_pair",
    "robustness_eval",
    "roc_auc",
    "run_finetune",
    "run_pretrain",
    "sample_segment",
    "video_score",
]
