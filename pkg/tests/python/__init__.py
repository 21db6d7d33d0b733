"""
Unit tests package for the SignX pipeline.
"""
