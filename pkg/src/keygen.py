#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Key Material Generator

Provisions the keystores used by the signing scenarios: for every subject a
2048-bit RSA key (PKCS#8 PEM) and a self-signed certificate valid for 365
days whose common name is the subject. A directory of generated
certificates doubles as a trust store.
"""

import logging
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, List, Optional, Union

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.x509.oid import NameOID

from src.security.crypto_sig import MIN_RSA_BITS
from src.security.errors import IoError
from src.utils.file_utils import ensure_dir_exists, save_file_content

# Configure logging
logger = logging.getLogger(__name__)

VALIDITY_DAYS = 365
PUBLIC_EXPONENT = 65537


@dataclass(frozen=True)
class GeneratedKey:
    subject: str
    key_path: Path
    cert_path: Path


def key_file_names(subject: str):
    return f"{subject}.key.pem", f"{subject}.cert.pem"


def self_signed_certificate(private_key: rsa.RSAPrivateKey, subject: str,
                            now: Optional[datetime] = None,
                            days: int = VALIDITY_DAYS) -> x509.Certificate:
    now = now or datetime.now(timezone.utc)
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, subject)])
    return (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(private_key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - timedelta(minutes=5))
        .not_valid_after(now + timedelta(days=days))
        .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
        .sign(private_key, hashes.SHA256())
    )


def generate_subject(out_dir: Path, subject: str, now: Optional[datetime] = None) -> GeneratedKey:
    private_key = rsa.generate_private_key(public_exponent=PUBLIC_EXPONENT, key_size=MIN_RSA_BITS)
    cert = self_signed_certificate(private_key, subject, now)
    key_pem = private_key.private_bytes(
        encoding=serialization.Encoding.PEM,
        format=serialization.PrivateFormat.PKCS8,
        encryption_algorithm=serialization.NoEncryption(),
    )
    cert_pem = cert.public_bytes(serialization.Encoding.PEM)
    key_name, cert_name = key_file_names(subject)
    key_path = save_file_content(out_dir / key_name, key_pem, mode=0o600)
    cert_path = save_file_content(out_dir / cert_name, cert_pem)
    return GeneratedKey(subject=subject, key_path=key_path, cert_path=cert_path)


def keygen(out_dir: Union[str, Path], subjects: Iterable[str],
           now: Optional[datetime] = None) -> List[GeneratedKey]:
    """
    Generate a key pair and certificate per subject.

    Args:
        out_dir: Directory for the PEM files (created if missing)
        subjects: Common names, one key pair each

    Returns:
        The generated files, in subject order

    Raises:
        ValueError: empty or path-like subject names
        IoError: the files cannot be written
    """
    subjects = [s.strip() for s in subjects]
    for subject in subjects:
        if not subject or "/" in subject or "\\" in subject or subject in (".", ".."):
            raise ValueError(f"invalid subject name: {subject!r}")
    if not subjects:
        raise ValueError("at least one subject is required")

    generated = []
    try:
        directory = ensure_dir_exists(out_dir)
        for subject in subjects:
            generated.append(generate_subject(directory, subject, now))
            logger.info(f"Generated key pair for {subject} in {directory}")
    except OSError as e:
        raise IoError(f"cannot write key material to {out_dir}: {e}") from e
    return generated
