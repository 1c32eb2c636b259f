"""News recommendation with collaborative news encoding and structural user encoding."""

__version__ = "0.1.0"
