"""Nanoscale NMR with shallow NV-type sensors: filter functions, bath statistics,
fitting, sensitivity, correlation spectroscopy and relaxation."""

__version__ = "0.1.0"
