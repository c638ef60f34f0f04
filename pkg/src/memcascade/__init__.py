"""Minimum-power membrane cascade design."""
