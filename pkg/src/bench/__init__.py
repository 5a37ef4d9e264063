"""
Load generation and reporting for comparing the security scenarios.
"""

__version__ = "1.0.0"
