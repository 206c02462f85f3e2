"""Desk-scale lab for teacher-student semi-supervised dense object detection."""

__version__ = "0.1.0"
