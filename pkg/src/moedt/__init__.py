"""Mixture-of-experts decision transformer workbench.

A numpy-based library for studying gradient conflict in offline multi-task
sequence modeling: a prompt-conditioned decision transformer backbone, a
mixture-of-experts extension with dense / top-k / hard routing, a synthetic
control task suite, gradient-conflict diagnostics with task grouping, and a
three-stage training pipeline with ablation variants.
"""

__version__ = "0.1.0"
