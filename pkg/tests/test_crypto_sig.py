#!/usr/bin/env python
# -*- coding: utf-8 -*-

import ast
import os
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import rsa

from src.keygen import self_signed_certificate
from src.security import crypto_sig
from src.security.crypto_sig import (
    EncryptedPayload,
    TrustStore,
    b64decode_strict,
    b64encode,
    decrypt_body,
    encrypt_body,
    load_keypair,
    rsa_sha1_sign,
    rsa_sha1_verify,
    sha1_digest,
)
from src.security.errors import (
    CertificateNotValid,
    ConfigError,
    DecryptionFailed,
    KeyCertMismatch,
    KeyUnusable,
    PemParseError,
)

VECTOR_FILE = Path(__file__).parent / "data" / "rsa_sha1_pkcs1v15.txt"


def load_vector():
    lines = [line for line in VECTOR_FILE.read_text().splitlines() if not line.startswith("#")]
    return ast.literal_eval("\n".join(lines))


def vector_key(vector):
    p, q, d = vector["p"], vector["q"], vector["d"]
    numbers = rsa.RSAPrivateNumbers(
        p=p, q=q, d=d,
        dmp1=rsa.rsa_crt_dmp1(d, p),
        dmq1=rsa.rsa_crt_dmq1(d, q),
        iqmp=rsa.rsa_crt_iqmp(p, q),
        public_numbers=rsa.RSAPublicNumbers(e=vector["e"], n=vector["n"]),
    )
    return numbers.private_key()


def pem_pair(private_key, cert):
    key_pem = private_key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
                                        serialization.NoEncryption())
    return key_pem, cert.public_bytes(serialization.Encoding.PEM)


def flip_bit(data: bytes, bit: int) -> bytes:
    mutated = bytearray(data)
    mutated[bit // 8] ^= 1 << (bit % 8)
    return bytes(mutated)


class TestDigests:
    def test_sha1_known_answers(self):
        assert b64encode(sha1_digest(b"")) == "2jmj7l5rSw0yVb/vlWAYkK/YBwk="
        assert b64encode(sha1_digest(b"abc")) == "qZk+NkcGgWq6PiVxeFDCbJzQ2J0="

    def test_strict_base64(self):
        assert b64decode_strict("YWJj") == b"abc"
        for bad in ["YWJ", "YW=j", "YWJj\n", "Y!Jj", "YR==", "Y WJj"]:
            with pytest.raises(ValueError):
                b64decode_strict(bad)

    def test_non_canonical_padding_bits_rejected(self):
        assert b64decode_strict("YQ==") == b"a"
        with pytest.raises(ValueError):
            b64decode_strict("YR==")


class TestRsaSha1:
    def test_matches_independent_vector(self):
        vector = load_vector()
        key = vector_key(vector)
        signature = crypto_sig.sign_with_private_key(vector["message"], key)
        assert signature == vector["signature"]
        assert crypto_sig.verify_with_public_key(vector["message"], vector["signature"], key.public_key())

    def test_vector_rejects_altered_signature(self):
        vector = load_vector()
        public_key = vector_key(vector).public_key()
        altered = b"\xff" + vector["signature"][1:]
        assert not crypto_sig.verify_with_public_key(vector["message"], altered, public_key)
        assert not crypto_sig.verify_with_public_key(vector["message"], bytes(64), public_key)

    def test_roundtrip_random_data(self, server_keys):
        rng = random.Random(3)
        for size in [0, 1, 17, 1000, 65536]:
            data = bytes(rng.randrange(256) for _ in range(size))
            signature = rsa_sha1_sign(data, server_keys)
            assert rsa_sha1_verify(data, signature, server_keys.certificate)

    def test_single_bit_mutations_fail(self, server_keys):
        data = b"<ds:SignedInfo>payload</ds:SignedInfo>"
        signature = rsa_sha1_sign(data, server_keys)
        rng = random.Random(5)
        for bit in rng.sample(range(len(data) * 8), 40):
            assert not rsa_sha1_verify(flip_bit(data, bit), signature, server_keys.certificate)
        for bit in rng.sample(range(len(signature) * 8), 40):
            assert not rsa_sha1_verify(data, flip_bit(signature, bit), server_keys.certificate)

    def test_wrong_certificate_fails(self, server_keys, client_keys):
        signature = rsa_sha1_sign(b"data", server_keys)
        assert not rsa_sha1_verify(b"data", signature, client_keys.certificate)

    def test_garbage_signature_is_false_not_error(self, server_keys):
        assert not rsa_sha1_verify(b"data", b"", server_keys.certificate)
        assert not rsa_sha1_verify(b"data", os.urandom(1000), server_keys.certificate)


class TestBodyEncryption:
    def test_roundtrip_and_length(self, server_keys):
        for size in [1, 15, 16, 17, 4096, 1024 * 1024]:
            plaintext = os.urandom(size)
            payload = encrypt_body(plaintext, server_keys.certificate)
            assert len(payload.ciphertext) == ((size + 1 + 15) // 16) * 16
            assert decrypt_body(payload, server_keys) == plaintext

    def test_encryptions_differ(self, server_keys):
        first = encrypt_body(b"same", server_keys.certificate)
        second = encrypt_body(b"same", server_keys.certificate)
        assert first.ciphertext != second.ciphertext
        assert first.encrypted_key != second.encrypted_key

    def test_empty_plaintext_rejected(self, server_keys):
        with pytest.raises(ValueError):
            encrypt_body(b"", server_keys.certificate)

    def test_wrong_key(self, server_keys, client_keys):
        payload = encrypt_body(b"secret body", server_keys.certificate)
        with pytest.raises(DecryptionFailed):
            decrypt_body(payload, client_keys)

    def test_truncated_ciphertext(self, server_keys):
        payload = encrypt_body(b"x" * 40, server_keys.certificate)
        truncated = EncryptedPayload(payload.encrypted_key, payload.iv, payload.ciphertext[:-3])
        with pytest.raises(DecryptionFailed):
            decrypt_body(truncated, server_keys)

    def test_corrupted_key(self, server_keys):
        payload = encrypt_body(b"x" * 40, server_keys.certificate)
        corrupted = EncryptedPayload(flip_bit(payload.encrypted_key, 9), payload.iv, payload.ciphertext)
        with pytest.raises(DecryptionFailed):
            decrypt_body(corrupted, server_keys)


class TestKeyPairs:
    def test_matched_pair(self, key_dir):
        keypair = load_keypair((key_dir / "server.key.pem").read_bytes(),
                               (key_dir / "server.cert.pem").read_bytes())
        assert keypair.subject_name == "server"
        assert keypair.private_key.key_size == 2048

    def test_mismatched_pair(self, key_dir):
        with pytest.raises(KeyCertMismatch):
            load_keypair((key_dir / "server.key.pem").read_bytes(),
                         (key_dir / "client.cert.pem").read_bytes())

    def test_truncated_pem(self, key_dir):
        key_pem = (key_dir / "server.key.pem").read_bytes()
        with pytest.raises(PemParseError):
            load_keypair(key_pem[:len(key_pem) // 2], (key_dir / "server.cert.pem").read_bytes())
        cert_pem = (key_dir / "server.cert.pem").read_bytes()
        with pytest.raises(PemParseError):
            load_keypair(key_pem, cert_pem[:len(cert_pem) // 2])

    def test_short_key_unusable(self):
        key = rsa.generate_private_key(public_exponent=65537, key_size=1024)
        key_pem, cert_pem = pem_pair(key, self_signed_certificate(key, "short"))
        with pytest.raises(KeyUnusable):
            load_keypair(key_pem, cert_pem)

    def test_expired_certificate(self, server_keys):
        past = datetime.now(timezone.utc) - timedelta(days=800)
        key_pem, cert_pem = pem_pair(server_keys.private_key,
                                     self_signed_certificate(server_keys.private_key, "old", now=past))
        with pytest.raises(CertificateNotValid):
            load_keypair(key_pem, cert_pem)


class TestTrustStore:
    def test_lookup_by_subject(self, server_keys, client_keys, mallory_keys):
        store = TrustStore([server_keys.certificate, client_keys.certificate])
        assert store.subjects == ["client", "server"]
        assert store.get("server") == server_keys.certificate
        assert store.is_trusted(client_keys.certificate)
        assert not store.is_trusted(mallory_keys.certificate)

    def test_same_subject_different_certificate_untrusted(self, server_keys, mallory_keys):
        impostor = self_signed_certificate(mallory_keys.private_key, "server")
        assert not TrustStore([server_keys.certificate]).is_trusted(impostor)

    def test_duplicate_subject(self, server_keys):
        store = TrustStore([server_keys.certificate])
        with pytest.raises(ConfigError):
            store.add(server_keys.certificate)

    def test_from_directory_skips_keys(self, key_dir):
        store = TrustStore.from_directory(key_dir)
        assert store.subjects == ["client", "mallory", "server"]

    def test_missing_directory(self, tmp_path):
        with pytest.raises(ConfigError):
            TrustStore.from_directory(tmp_path / "absent")
