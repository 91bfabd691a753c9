"""Drift-aligned tangent regularization and deployment-risk monitoring for frozen predictors."""

__version__ = "0.1.0"
