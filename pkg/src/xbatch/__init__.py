"""Research-automation pipeline: batch criteria in, comparison-ready deliverables out."""

__version__ = "0.1.0"
