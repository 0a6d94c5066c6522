"""Rectify-then-recognize licence plate reader: perspective rectifier, page-based recognizer, focal CTC."""

__version__ = "0.1.0"
