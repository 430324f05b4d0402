"""Context-aware optimal-transport learning for unpaired image enhancement."""

__version__ = "0.1.0"
