"""Regression Monte Carlo laboratory for reflected backward doubly stochastic equations."""
