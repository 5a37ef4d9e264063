"""
Utility modules for the SOAP security service: configuration, file helpers,
metrics and the shared replay cache.
"""

__version__ = "1.0.0"
