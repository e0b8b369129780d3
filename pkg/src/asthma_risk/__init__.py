"""Pediatric asthma ED-visit risk pipeline on claims extracts."""

__version__ = "0.1.0"
