"""Graph-to-SFILES: predict control-extended flowsheets from process graphs."""

__version__ = "0.1.0"
