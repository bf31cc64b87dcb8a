"""Bridge from pretrained speech representation checkpoints to FEAT1 files."""

__version__ = "0.1.0"
