"""Experiment harness: config parsing, grid runner, theory verification, plots."""
