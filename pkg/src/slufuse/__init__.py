"""Speech + text late-fusion intent classification under simulated ASR errors."""

__version__ = "0.1.0"
