"""
Conformal calibration of cascaded predictive systems.
"""
