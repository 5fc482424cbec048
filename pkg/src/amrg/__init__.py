"""Mammography report generation toolkit: data checks, preprocessing, metrics and toy adapters."""

__version__ = "0.1.0"
