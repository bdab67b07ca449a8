"""Transport-density dynamics on triangular meshes and graphs."""

__version__ = "0.1.0"
