"""Named, signed and encrypted storage shared across your own and your friends' devices."""

__version__ = "0.1.0"
