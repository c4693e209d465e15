"""LSTM acoustic event classification with nine pooling methods and position-sensitivity analysis."""

__version__ = "0.1.0"
