"""speechcaps-forge: multi-talker speaking-style dataset synthesis and evaluation."""

__version__ = "0.1.0"
