#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Cryptographic primitives for the SOAP security toolkit.

Provides:
- SHA-1 digests and strict base64 helpers
- RSA-SHA1 (RSASSA-PKCS1-v1_5) signing and verification
- Body encryption for the sign+encrypt scenario (AES-256-CBC content key
  wrapped with RSA-OAEP), i.e. the Basic-256 suite
- PEM key pair loading and a subject-name trust store

WARNING: SHA-1 and RSA-SHA1 are deprecated. They are used here on purpose,
to reproduce the security design being evaluated, not as a recommendation.
"""

import base64
import binascii
import hashlib
import logging
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, padding, serialization
from cryptography.hazmat.primitives.asymmetric import padding as asym_padding
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.x509.oid import NameOID

from src.security.errors import (
    CertificateNotValid,
    ConfigError,
    DecryptionFailed,
    KeyCertMismatch,
    KeyUnusable,
    PemParseError,
)

logger = logging.getLogger(__name__)

MIN_RSA_BITS = 2048
CONTENT_KEY_BYTES = 32
IV_BYTES = 16


# ---------------------------------------------------------------------------
# Digests and encodings
# ---------------------------------------------------------------------------

def sha1_digest(data: bytes) -> bytes:
    return hashlib.sha1(data).digest()


def b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64decode_strict(value: str) -> bytes:
    """Decode base64, rejecting anything that is not the canonical encoding.

    Non-alphabet characters, bad padding and non-zero pad bits all raise
    ValueError, so one byte string has exactly one accepted text form.
    """
    if not isinstance(value, str):
        raise ValueError("base64 value must be text")
    try:
        raw = base64.b64decode(value.encode("ascii"), validate=True)
    except (binascii.Error, UnicodeEncodeError) as e:
        raise ValueError(f"invalid base64: {e}") from e
    if base64.b64encode(raw).decode("ascii") != value:
        raise ValueError("non-canonical base64 encoding")
    return raw


# ---------------------------------------------------------------------------
# Keys, certificates and trust
# ---------------------------------------------------------------------------

def certificate_subject_name(cert: x509.Certificate) -> str:
    common_names = cert.subject.get_attributes_for_oid(NameOID.COMMON_NAME)
    if common_names:
        return str(common_names[0].value)
    return cert.subject.rfc4514_string()


def _check_validity(cert: x509.Certificate, now: Optional[datetime] = None) -> None:
    now = now or datetime.now(timezone.utc)
    if not (cert.not_valid_before_utc <= now <= cert.not_valid_after_utc):
        raise CertificateNotValid(
            f"certificate for {certificate_subject_name(cert)} is outside its validity "
            f"window ({cert.not_valid_before_utc:%Y-%m-%d} .. {cert.not_valid_after_utc:%Y-%m-%d})")


def certificate_is_current(cert: x509.Certificate, now: Optional[datetime] = None) -> bool:
    try:
        _check_validity(cert, now)
    except CertificateNotValid:
        return False
    return True


def load_certificate(source: bytes) -> x509.Certificate:
    try:
        return x509.load_pem_x509_certificate(source)
    except (ValueError, TypeError) as e:
        raise PemParseError(f"cannot parse PEM certificate: {e}") from e


def load_der_certificate(source: bytes) -> x509.Certificate:
    try:
        return x509.load_der_x509_certificate(source)
    except (ValueError, TypeError) as e:
        raise PemParseError(f"cannot parse DER certificate: {e}") from e


def certificate_to_der(cert: x509.Certificate) -> bytes:
    return cert.public_bytes(serialization.Encoding.DER)


@dataclass(frozen=True)
class KeyPair:
    private_key: rsa.RSAPrivateKey
    certificate: x509.Certificate
    subject_name: str


def load_keypair(private_key_source: bytes, certificate_source: bytes,
                 now: Optional[datetime] = None) -> KeyPair:
    """Load a PKCS#8 PEM private key and its matching PEM certificate."""
    try:
        private_key = serialization.load_pem_private_key(private_key_source, password=None)
    except (ValueError, TypeError) as e:
        raise PemParseError(f"cannot parse PEM private key: {e}") from e
    certificate = load_certificate(certificate_source)

    if not isinstance(private_key, rsa.RSAPrivateKey):
        raise KeyUnusable("private key is not an RSA key")
    if private_key.key_size < MIN_RSA_BITS:
        raise KeyUnusable(f"RSA key is {private_key.key_size} bits; at least {MIN_RSA_BITS} required")

    cert_public = certificate.public_key()
    if not isinstance(cert_public, rsa.RSAPublicKey) or \
            cert_public.public_numbers() != private_key.public_key().public_numbers():
        raise KeyCertMismatch("certificate public key does not match the private key")

    _check_validity(certificate, now)
    subject = certificate_subject_name(certificate)
    logger.debug(f"Loaded key pair for {subject}")
    return KeyPair(private_key=private_key, certificate=certificate, subject_name=subject)


def load_keypair_files(private_key_path: Union[str, Path], certificate_path: Union[str, Path]) -> KeyPair:
    return load_keypair(Path(private_key_path).read_bytes(), Path(certificate_path).read_bytes())


class TrustStore:
    """Directly trusted peer certificates keyed by subject name."""

    def __init__(self, certificates: Iterable[x509.Certificate] = ()):
        self._certificates: Dict[str, x509.Certificate] = {}
        self._lock = threading.Lock()
        for cert in certificates:
            self.add(cert)

    def add(self, cert: x509.Certificate) -> None:
        subject = certificate_subject_name(cert)
        with self._lock:
            if subject in self._certificates:
                raise ConfigError(f"duplicate subject in trust store: {subject}")
            self._certificates[subject] = cert

    def get(self, subject_name: str) -> Optional[x509.Certificate]:
        with self._lock:
            return self._certificates.get(subject_name)

    def is_trusted(self, cert: x509.Certificate) -> bool:
        trusted = self.get(certificate_subject_name(cert))
        return trusted is not None and trusted == cert

    @property
    def subjects(self) -> List[str]:
        with self._lock:
            return sorted(self._certificates)

    def __len__(self) -> int:
        return len(self._certificates)

    @classmethod
    def from_directory(cls, path: Union[str, Path]) -> "TrustStore":
        directory = Path(path)
        if not directory.is_dir():
            raise ConfigError(f"trust store directory not found: {directory}")
        store = cls()
        for pem_file in sorted(directory.glob("*.pem")):
            content = pem_file.read_bytes()
            if b"BEGIN CERTIFICATE" not in content:
                continue
            store.add(load_certificate(content))
        logger.info(f"Loaded {len(store)} trusted certificates from {directory}")
        return store


# ---------------------------------------------------------------------------
# RSA-SHA1 signatures
# ---------------------------------------------------------------------------

def sign_with_private_key(data: bytes, private_key: rsa.RSAPrivateKey) -> bytes:
    try:
        return private_key.sign(data, asym_padding.PKCS1v15(), hashes.SHA1())
    except (ValueError, TypeError, AttributeError) as e:
        raise KeyUnusable(f"cannot sign with key: {e}") from e


def verify_with_public_key(data: bytes, signature: bytes, public_key) -> bool:
    if not isinstance(public_key, rsa.RSAPublicKey):
        return False
    try:
        public_key.verify(signature, data, asym_padding.PKCS1v15(), hashes.SHA1())
        return True
    except InvalidSignature:
        return False
    except (ValueError, TypeError) as e:
        logger.debug(f"Signature verification error: {e}")
        return False


def rsa_sha1_sign(data: bytes, key: KeyPair) -> bytes:
    return sign_with_private_key(data, key.private_key)


def rsa_sha1_verify(data: bytes, signature: bytes, cert: x509.Certificate) -> bool:
    try:
        public_key = cert.public_key()
    except (ValueError, AttributeError):
        return False
    return verify_with_public_key(data, signature, public_key)


# ---------------------------------------------------------------------------
# Body encryption
# ---------------------------------------------------------------------------

def _oaep() -> asym_padding.OAEP:
    return asym_padding.OAEP(mgf=asym_padding.MGF1(algorithm=hashes.SHA1()),
                             algorithm=hashes.SHA1(), label=None)


@dataclass(frozen=True)
class EncryptedPayload:
    encrypted_key: bytes
    iv: bytes
    ciphertext: bytes


def encrypt_body(plaintext: bytes, recipient_cert: x509.Certificate) -> EncryptedPayload:
    if not plaintext:
        raise ValueError("plaintext must not be empty")
    public_key = recipient_cert.public_key()
    if not isinstance(public_key, rsa.RSAPublicKey):
        raise KeyUnusable("recipient certificate does not carry an RSA key")

    content_key = os.urandom(CONTENT_KEY_BYTES)
    iv = os.urandom(IV_BYTES)
    padder = padding.PKCS7(algorithms.AES.block_size).padder()
    padded = padder.update(plaintext) + padder.finalize()
    encryptor = Cipher(algorithms.AES(content_key), modes.CBC(iv)).encryptor()
    ciphertext = encryptor.update(padded) + encryptor.finalize()

    try:
        encrypted_key = public_key.encrypt(content_key, _oaep())
    except ValueError as e:
        raise KeyUnusable(f"cannot wrap content key: {e}") from e
    return EncryptedPayload(encrypted_key=encrypted_key, iv=iv, ciphertext=ciphertext)


def decrypt_body(payload: EncryptedPayload, key: KeyPair) -> bytes:
    try:
        content_key = key.private_key.decrypt(payload.encrypted_key, _oaep())
    except ValueError as e:
        raise DecryptionFailed("cannot unwrap content key") from e
    if len(content_key) != CONTENT_KEY_BYTES or len(payload.iv) != IV_BYTES:
        raise DecryptionFailed("content key or IV has the wrong length")
    if not payload.ciphertext or len(payload.ciphertext) % IV_BYTES:
        raise DecryptionFailed("ciphertext is not a whole number of blocks")

    decryptor = Cipher(algorithms.AES(content_key), modes.CBC(payload.iv)).decryptor()
    padded = decryptor.update(payload.ciphertext) + decryptor.finalize()
    unpadder = padding.PKCS7(algorithms.AES.block_size).unpadder()
    try:
        return unpadder.update(padded) + unpadder.finalize()
    except ValueError as e:
        raise DecryptionFailed("bad padding") from e
