"""
Test package for the PIP Restoration Toolkit

Unit tests per module, shared fixtures in conftest.py and the slow
desk-scale acceptance runs.
"""
