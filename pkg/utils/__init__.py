"""
Utility modules for the PIP Restoration Toolkit

This package contains utility modules for logging, error handling,
and other common functionality used throughout the toolkit.
"""
