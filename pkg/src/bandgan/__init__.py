"""Unpaired noisy-to-clean log-Mel mapping with CycleGAN generators and per-band discriminators."""
from .exceptions import BandGANError, ConfigurationError, InputError, RoutingError, ShapeError, UsageError
from .features import (AudioClip, FeatureConfig, FeatureSequence, compute_log_mel, mel_filterbank_matrix,
                       read_features, stack_context_windows, unstack_center_frames, write_features)
from .losses import BandMask, DomainLabel, LossBreakdown, LossWeights, make_band_masks
from .routing import ArchitectureSpec, Gender, GeneratorBank, Noise, SubsetKey, Variant, build_architecture, route
from .training import TrainConfig, lr_schedule, train_loop, train_step

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec", "AudioClip", "BandGANError", "BandMask", "ConfigurationError", "DomainLabel",
    "FeatureConfig", "FeatureSequence", "Gender", "GeneratorBank", "InputError", "LossBreakdown", "LossWeights",
    "Noise", "RoutingError", "ShapeError", "SubsetKey", "TrainConfig", "UsageError", "Variant",
    "build_architecture", "compute_log_mel", "lr_schedule", "make_band_masks", "mel_filterbank_matrix",
    "read_features", "route", "stack_context_windows", "train_loop", "train_step", "unstack_center_frames",
    "write_features",
]
