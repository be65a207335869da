"""simtilt: similarity-tilted SMILES generation and budget-accounted optimization."""

__version__ = "0.1.0"
