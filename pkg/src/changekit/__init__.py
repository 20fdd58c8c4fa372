"""Self-supervised pretraining and evaluation toolkit for scene change detection."""

__version__ = "0.1.0"
