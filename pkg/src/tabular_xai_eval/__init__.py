"""Tabular XAI Eval - benchmark local explanations on tabular classifiers."""

__version__ = "1.0.0"
