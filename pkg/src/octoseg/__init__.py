"""Octave-convolution document segmentation built on a small numpy autodiff core."""

__version__ = "0.1.0"
