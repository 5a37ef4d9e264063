"""
Message-level security for SOAP: XML model, RSA-SHA1 signatures, WS-Security
tokens, scenario envelopes and the non-encrypted session protocol.
"""

__version__ = "1.0.0"
