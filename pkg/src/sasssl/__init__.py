"""Self-supervised pretraining and linear probing on synthetic multi-band sonar snippets."""

__version__ = "0.1.0"
