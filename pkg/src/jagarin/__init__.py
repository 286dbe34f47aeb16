"""Jagarin: duty-aware wake scheduling, commercial message routing, and a
structured institution-to-agent message codec, with a seeded simulation
harness for policy comparison."""

__version__ = "0.1.0"
