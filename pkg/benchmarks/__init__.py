"""
Performance benchmarking suite for the quantile metamodel toolkit.
"""
