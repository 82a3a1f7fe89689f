"""Authenticated Byzantine consensus: engine, link-model simulator, adversaries and trace checkers."""

from .model import BOTTOM, SystemParams, ResilienceError, coordinator_of, quorum_thresholds

__version__ = "0.1.0"

__all__ = ["BOTTOM", "SystemParams", "ResilienceError", "coordinator_of", "quorum_thresholds"]
