"""Deterministic discrete-event network simulator."""
