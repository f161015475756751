"""EEG match-mismatch classification with acoustic and semantic stimulus features."""

__version__ = "0.1.0"
