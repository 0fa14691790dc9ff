"""Cloud-edge-device authentication and key agreement with pseudonymous devices."""

__version__ = "0.1.0"
