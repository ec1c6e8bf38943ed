"""Deepfake video detection: blended-artifact synthesis, patch-level
supervision, feature-space domain augmentation, and a video-level
evaluation harness."""

__version__ = "0.1.0"
