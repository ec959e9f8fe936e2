"""Phase-field TFDW energies and their liquid drop limit."""

__version__ = "0.1.0"
