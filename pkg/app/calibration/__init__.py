"""
Quantiles, split conformal and system-level calibrators.
"""
