"""tbscreen: chest X-ray tuberculosis screening toolkit."""

__version__ = "0.1.0"
