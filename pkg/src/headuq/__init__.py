"""Bayesian linear heads over frozen text embeddings.

Training (deterministic, MC-dropout, deep ensemble, cyclical SG-MCMC),
entropy decomposition, calibration and annotator-divergence metrics,
selective prediction, active learning, temperature scaling, and the
statistical comparison protocol, behind a FastAPI service with a thin CLI.
"""

__version__ = "0.1.0"
