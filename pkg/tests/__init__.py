"""Tests for tabular-xai-eval."""
