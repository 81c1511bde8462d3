"""Power inflation under the statistical-significance filter."""

__version__ = "0.1.0"
