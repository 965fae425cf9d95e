"""Transparency audits for clinical text corpora and model releases."""

__version__ = "0.1.0"
