"""cone-lab: numerical laboratory for expanding-cone geometry."""

__version__ = "0.1.0"
