"""Video shadow detection with text-guided semantic blocks and tokenized temporal modelling."""

__version__ = "0.1.0"
