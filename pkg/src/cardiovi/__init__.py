"""Two-stage Bayesian-optimisation variational inference for cardiac ECG models."""

__version__ = "0.1.0"
