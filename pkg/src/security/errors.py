#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Exception hierarchy for the SOAP security toolkit.

Operations that the toolkit treats as "validation" (token checks, envelope
verification, session counters) return Accept/Reject values instead of
raising; see src.security.results. Everything here signals misuse,
malformed input outside the supported subset, or a transport failure.
"""

from typing import Optional, Tuple


class Error(Exception):
    pass


# XML model

class XmlError(Error):
    pass


class MalformedXml(XmlError):
    def __init__(self, reason: str, position: Optional[Tuple[int, int]] = None):
        self.reason = reason
        self.position = position
        where = f" at line {position[0]}, column {position[1]}" if position else ""
        super().__init__(f"malformed XML{where}: {reason}")


class UnsupportedConstruct(XmlError):
    pass


# Crypto

class CryptoError(Error):
    pass


class KeyUnusable(CryptoError):
    pass


class DecryptionFailed(CryptoError):
    pass


class PemParseError(CryptoError):
    pass


class KeyCertMismatch(CryptoError):
    pass


class CertificateNotValid(CryptoError):
    pass


# Tokens and envelopes

class TokenParseError(Error):
    pass


class EnvelopeError(Error):
    pass


class InsufficientCredentials(EnvelopeError):
    pass


class SigningFailed(EnvelopeError):
    pass


# Session protocol

class SessionError(Error):
    pass


class InvalidPhase(SessionError):
    pass


class MalformedContinue(SessionError):
    pass


class NonceMismatch(SessionError):
    pass


# Service runtime

class ServiceError(Error):
    pass


class ConfigError(ServiceError):
    pass


class BindFailed(ServiceError):
    pass


class TransportError(ServiceError):
    pass


class TargetUnavailable(ServiceError):
    pass


class VerificationFailed(ServiceError):
    """The peer's response did not pass the scenario's checks."""

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


class SoapFault(ServiceError):
    def __init__(self, message: str, code: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.code = code


class IoError(ServiceError):
    """Reading or writing key material or reports failed."""
