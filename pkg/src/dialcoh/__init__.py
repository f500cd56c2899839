"""Entity-grid and dialogue-act-grid coherence models for dialogue."""

__version__ = "0.1.0"
