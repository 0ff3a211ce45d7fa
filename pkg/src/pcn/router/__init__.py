"""Forwarding engine: packets, tables and the router."""
