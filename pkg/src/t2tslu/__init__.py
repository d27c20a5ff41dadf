"""Joint intent detection and slot filling as constrained text-to-text generation."""

__version__ = "0.1.0"
