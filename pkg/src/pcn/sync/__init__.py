"""Optimistic replication."""
