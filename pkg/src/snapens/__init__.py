"""Snapshot ensembles for collaborative filtering."""
