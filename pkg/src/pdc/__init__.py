"""Short-term zone demand forecasting, dynamic zone clustering and courier relocation."""

__version__ = "0.1.0"
