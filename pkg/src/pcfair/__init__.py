"""Plug-in counterfactual fairness on simulated structural causal models."""
