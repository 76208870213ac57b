"""Stochastic trust-region optimization with SVRG gradients, plus baselines and a benchmark harness."""
