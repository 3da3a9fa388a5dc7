"""Context-aware separation logic checker over flow graphs."""

__version__ = "0.1.0"
