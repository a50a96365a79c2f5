"""Cross-compiler differential fuzzing for Solidity toolchains."""

__version__ = "0.1.0"
