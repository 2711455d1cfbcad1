"""Tests for the wave positivity laboratory."""
