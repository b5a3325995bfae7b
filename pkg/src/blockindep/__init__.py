"""Independence tests for groups of variables via block correlation spectra."""
__version__ = "0.1.0"
