"""Detection and localization of UI display issues in app screenshots."""

__version__ = "0.1.0"
