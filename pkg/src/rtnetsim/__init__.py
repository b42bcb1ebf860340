"""Desk-scale simulator for embedded packet reception and real-time offloading."""

__version__ = "0.1.0"
