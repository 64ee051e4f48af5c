"""
Test suite for the QFEI toolkit.
"""
