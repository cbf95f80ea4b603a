"""Siamese machine unlearning on a small define-by-run autodiff engine."""

__version__ = "0.1.0"
