"""Point-cloud extraction, filtering and validation for scanning FMCW radar data cubes."""

__version__ = "0.1.0"
