"""Electromagnetic forming and multi-point perforation of tubes."""

__version__ = "0.1.0"
