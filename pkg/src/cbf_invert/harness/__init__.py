"""Scenarios, rollouts, Monte Carlo, sweeps and certificate runs."""
