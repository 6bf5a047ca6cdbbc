"""Spike / Stable / Dip blood-pressure change labelling from paired PPG segments."""

__version__ = "0.1.0"
