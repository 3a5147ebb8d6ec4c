"""Tool flank-wear prediction from drilling signals with a numpy LSTM."""

__version__ = "0.1.0"
