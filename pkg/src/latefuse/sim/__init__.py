"""Scenarios, synthetic generation and the simulation loop."""
