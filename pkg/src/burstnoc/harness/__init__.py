"""Topology loading, traffic, metrics and the command-line front end."""
