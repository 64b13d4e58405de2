"""Teacher/student self-training for 3-way sentiment classification."""

__version__ = "0.1.0"
