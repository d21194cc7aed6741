"""Instant Soup Pruning and Instant Model Soup on a from-scratch numpy engine."""
