"""Self-distilled hashing at desk scale: train, quantize, index, evaluate."""

__version__ = "0.1.0"
