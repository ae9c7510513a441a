"""Federated learning simulator with a graph-based model-poisoning adversary and server defenses."""
__version__ = "0.1.0"
