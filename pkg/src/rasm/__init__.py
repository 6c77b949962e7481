"""Segmentation-free handwritten Arabic line recognition with a CNN-BLSTM-CTC model."""

__version__ = "0.1.0"
