"""Scenario-conditioned mixture-of-experts matching: model, training, evaluation."""

__version__ = "0.1.0"
