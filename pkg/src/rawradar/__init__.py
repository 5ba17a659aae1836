"""Radar object detection from raw ADC frames with learnable Fourier layers."""

__version__ = "0.1.0"
