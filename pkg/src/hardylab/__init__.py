"""Thresholds, discrete forms and a mountain-pass solver for perturbed Hardy-Schroedinger problems."""
