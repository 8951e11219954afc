"""Experiment harness: artifacts on disk, runs, reports, figures and the CLI."""
