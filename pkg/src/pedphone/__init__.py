"""Pedestrian phone-activity recognition from pose, hand and gaze cues,
with GPDM particle-filter pose tracking."""

__version__ = "0.1.0"
