"""Benchmark cases, error measurement, convergence studies and the command line."""
