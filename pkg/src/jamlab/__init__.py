"""Synthetic GNSS jamming workbench.

Generates interference campaigns, turns observation runs into
discrete-time heterogeneous graph sequences, and trains a
graph-convolutional LSTM deviation regressor plus three time-series
baselines on a small reverse-mode autodiff kernel.
"""

__version__ = "0.1.0"
