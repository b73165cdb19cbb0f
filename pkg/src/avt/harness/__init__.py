"""Synthetic data, training loop, inference and persistence."""
