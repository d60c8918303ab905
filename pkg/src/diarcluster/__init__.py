"""Speaker-embedding clustering toolkit for oracle-segmented diarization."""

__version__ = "0.1.0"
