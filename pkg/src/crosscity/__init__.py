"""Cross-city transfer learning for grid-based crowd flow prediction."""

__version__ = "0.1.0"
