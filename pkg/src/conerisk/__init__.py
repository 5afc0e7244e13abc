"""Dynamic multivariate risk measures on finite scenario trees."""

__version__ = "0.1.0"
