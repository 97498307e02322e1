"""Relation-guided video pose estimation at desk scale."""

__version__ = "0.1.0"
