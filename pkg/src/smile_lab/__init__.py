"""Desk-scale lab for self-distilled mixup transfer learning."""

__version__ = "0.1.0"
