"""Bayesian-optimized deep ensembles with uncertainty decomposition.

Subsystems: Sobol sequences (`quasirand`), hyperparameter-space encoding
(`hyperspace`), Gaussian-process surrogate (`gp`), noisy expected improvement
(`acquisition`), heteroscedastic dense-block networks (`network`), ensemble
aggregation (`ensemble`), synthetic field data and noise injection
(`fielddata`), metrics and reports (`metrics`, `reporting`), the per-member
optimization loop (`orchestrator`) and the command line (`cli`).
"""

__version__ = "0.1.0"
