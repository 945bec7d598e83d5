"""MIMO-OFDM link-level simulator with classical and StructNet-CE channel estimators."""

__version__ = "0.1.0"
