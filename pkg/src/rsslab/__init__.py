"""Desk-scale lab for vision-calibrated Wi-Fi RSS indoor localization."""

__version__ = "0.1.0"
