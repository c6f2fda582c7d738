"""Datasets, training, evaluation sweeps, reports and the command line."""
