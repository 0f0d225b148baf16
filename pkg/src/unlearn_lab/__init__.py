"""Group-robust machine unlearning on synthetic grouped data."""

__version__ = "0.1.0"
