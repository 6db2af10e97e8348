"""Fusion segmentation models: plans, encoders, decoder, training."""

from .data import (
    ManifestEntry,
    Sample,
    assemble_streams,
    batch_samples,
    load_samples,
    read_manifest,
    split_entries,
)
from .network import FusionNet, adapt_first_layer, build_model, mask_from_logits
from .plan import (
    ENCODER_PROFILES,
    FULL_ENCODER,
    TINY_ENCODER,
    EncoderSpec,
    FusionPlan,
    InputSignal,
    parse_plan,
)
from .training import EpochStats, Hyper, evaluate, train

__all__ = [
    "ENCODER_PROFILES",
    "EpochStats",
    "EncoderSpec",
    "FULL_ENCODER",
    "FusionNet",
    "FusionPlan",
    "Hyper",
    "InputSignal",
    "ManifestEntry",
    "Sample",
    "TINY_ENCODER",
    "adapt_first_layer",
    "assemble_streams",
    "batch_samples",
    "build_model",
    "evaluate",
    "load_samples",
    "mask_from_logits",
    "parse_plan",
    "read_manifest",
    "split_entries",
    "train",
]
