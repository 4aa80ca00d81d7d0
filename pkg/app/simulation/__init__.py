"""
Synthetic cascaded systems and downstream regressors.
"""
