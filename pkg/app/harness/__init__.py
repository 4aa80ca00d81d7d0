"""
Experiment configuration, orchestration and CLI.
"""
