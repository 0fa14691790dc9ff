"""Simulation harness: network, adversary, scenarios, cost reporting."""
