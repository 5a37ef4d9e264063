#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
WS-Security credential elements and their server-side validation.

Provides:
- UsernameToken with PasswordDigest, BinarySecurityToken, Timestamp
- token_to_xml / token_from_xml (strict: unknown children are rejected)
- validate_username_token backed by a UserStore and a NonceCache with an
  atomic check-and-insert
"""

import hmac
import logging
import os
import re
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, Optional, Union

from cryptography import x509

from src.security import crypto_sig
from src.security.constants import (
    BASE64_ENCODING_TYPE,
    PASSWORD_DIGEST_TYPE,
    TIMESTAMP_FORMAT,
    WSSE_NS,
    WSSE_PREFIX,
    WSU_NS,
    WSU_PREFIX,
    X509V3_VALUE_TYPE,
)
from src.security.errors import ConfigError, PemParseError, TokenParseError
from src.security.results import ACCEPT, Reject, TokenRejectReason, Verdict
from src.security.xml_model import XmlElement, XmlName, element, text_element

logger = logging.getLogger(__name__)

NONCE_BYTES = 16
DEFAULT_SKEW = timedelta(seconds=300)
DEFAULT_NONCE_WINDOW = timedelta(seconds=600)
DEFAULT_TIMESTAMP_LIFETIME = timedelta(seconds=300)
TIMESTAMP_RE = re.compile(r"\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z", re.ASCII)

EntropySource = Callable[[int], bytes]

WSU_ID = XmlName(WSU_NS, "Id", WSU_PREFIX)
_TYPE = XmlName("", "Type")
_ENCODING_TYPE = XmlName("", "EncodingType")
_VALUE_TYPE = XmlName("", "ValueType")


class DigestOrder(str, Enum):
    """Concatenation order of the PasswordDigest inputs."""
    PASSWORD_FIRST = "paper"    # password + nonce + created
    OASIS = "oasis"             # nonce + created + password

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str) and value.lower() == "password-first":
            return cls.PASSWORD_FIRST
        return None


# ---------------------------------------------------------------------------
# Timestamps
# ---------------------------------------------------------------------------

def format_timestamp(moment: datetime) -> str:
    if moment.tzinfo is None:
        moment = moment.replace(tzinfo=timezone.utc)
    return moment.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT)


def parse_timestamp(value: str) -> datetime:
    if not isinstance(value, str) or not TIMESTAMP_RE.fullmatch(value):
        raise TokenParseError(f"timestamp {value!r} is not YYYY-MM-DDThh:mm:ssZ")
    try:
        parsed = datetime.strptime(value, TIMESTAMP_FORMAT)
    except (TypeError, ValueError) as e:
        raise TokenParseError(f"timestamp {value!r} is not YYYY-MM-DDThh:mm:ssZ") from e
    return parsed.replace(tzinfo=timezone.utc)


def new_element_id(kind: str) -> str:
    return f"{kind}-{uuid.uuid4()}"


# ---------------------------------------------------------------------------
# Token types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UsernameToken:
    username: str
    password_digest: str
    nonce: bytes
    created: str


@dataclass(frozen=True)
class BinarySecurityToken:
    id: str
    value: str
    value_type: str = X509V3_VALUE_TYPE
    encoding_type: str = BASE64_ENCODING_TYPE

    @classmethod
    def from_certificate(cls, cert: x509.Certificate, token_id: Optional[str] = None) -> "BinarySecurityToken":
        der = crypto_sig.certificate_to_der(cert)
        return cls(id=token_id or new_element_id("X509"), value=crypto_sig.b64encode(der))

    def certificate(self) -> x509.Certificate:
        try:
            der = crypto_sig.b64decode_strict(self.value)
        except ValueError as e:
            raise TokenParseError(f"BinarySecurityToken value is not base64: {e}") from e
        try:
            return crypto_sig.load_der_certificate(der)
        except PemParseError as e:
            raise TokenParseError(str(e)) from e


@dataclass(frozen=True)
class Timestamp:
    created: str
    expires: str
    id: str = field(default_factory=lambda: new_element_id("TS"))

    @classmethod
    def issue(cls, now: datetime, lifetime: timedelta = DEFAULT_TIMESTAMP_LIFETIME) -> "Timestamp":
        return cls(created=format_timestamp(now), expires=format_timestamp(now + lifetime))

    @property
    def created_at(self) -> datetime:
        return parse_timestamp(self.created)

    @property
    def expires_at(self) -> datetime:
        return parse_timestamp(self.expires)


Token = Union[UsernameToken, BinarySecurityToken, Timestamp]


# ---------------------------------------------------------------------------
# Password digests
# ---------------------------------------------------------------------------

def password_digest(password: str, nonce: bytes, created: str,
                    order: DigestOrder = DigestOrder.PASSWORD_FIRST) -> str:
    password_bytes = password.encode("utf-8")
    created_bytes = created.encode("utf-8")
    if DigestOrder(order) is DigestOrder.OASIS:
        material = nonce + created_bytes + password_bytes
    else:
        material = password_bytes + nonce + created_bytes
    return crypto_sig.b64encode(crypto_sig.sha1_digest(material))


def make_username_token(username: str, password: str, now: datetime,
                        rng: EntropySource = os.urandom,
                        digest_order: DigestOrder = DigestOrder.PASSWORD_FIRST) -> UsernameToken:
    if not username or not password:
        raise ValueError("username and password must be non-empty")
    nonce = rng(NONCE_BYTES)
    created = format_timestamp(now)
    return UsernameToken(username=username,
                         password_digest=password_digest(password, nonce, created, digest_order),
                         nonce=nonce, created=created)


# ---------------------------------------------------------------------------
# Stores
# ---------------------------------------------------------------------------

class UserStore:
    """username -> clear-text password (needed to recompute digests)."""

    def __init__(self, users: Optional[Dict[str, str]] = None):
        self._users: Dict[str, str] = dict(users or {})
        self._lock = threading.RLock()

    def add(self, username: str, password: str) -> None:
        with self._lock:
            if username in self._users:
                raise ConfigError(f"duplicate user: {username}")
            self._users[username] = password

    def get_password(self, username: str) -> Optional[str]:
        with self._lock:
            return self._users.get(username)

    def __contains__(self, username: str) -> bool:
        return self.get_password(username) is not None

    def __len__(self) -> int:
        return len(self._users)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "UserStore":
        """Load `username:password` lines; `#` starts a comment line."""
        store_path = Path(path)
        if not store_path.is_file():
            raise ConfigError(f"user store not found: {store_path}")
        store = cls()
        for line_no, raw in enumerate(store_path.read_text(encoding="utf-8").splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            username, sep, password = line.partition(":")
            if not sep or not username or not password:
                raise ConfigError(f"{store_path}:{line_no}: expected username:password")
            store.add(username, password)
        logger.info(f"Loaded {len(store)} users from {store_path}")
        return store


class NonceCache:
    """Seen nonces with their insertion time, kept for `window`. Expired
    entries are dropped at most every `purge_interval` (default: `window`)."""

    def __init__(self, window: timedelta = DEFAULT_NONCE_WINDOW, purge_interval: Optional[timedelta] = None):
        self.window = window
        self.purge_interval = purge_interval if purge_interval is not None else window
        self._entries: Dict[bytes, datetime] = {}
        self._next_purge: Optional[datetime] = None
        self._lock = threading.Lock()

    def contains(self, nonce: bytes, now: datetime) -> bool:
        with self._lock:
            inserted = self._entries.get(nonce)
            return inserted is not None and now - inserted <= self.window

    def check_and_insert(self, nonce: bytes, now: datetime) -> bool:
        """Insert nonce; False if it was already present and unexpired."""
        with self._lock:
            inserted = self._entries.get(nonce)
            if inserted is not None and now - inserted <= self.window:
                return False
            if self._next_purge is None or now >= self._next_purge:
                self._purge_locked(now)
                self._next_purge = now + self.purge_interval
            self._entries[nonce] = now
            return True

    def purge(self, now: datetime) -> int:
        with self._lock:
            return self._purge_locked(now)

    def _purge_locked(self, now: datetime) -> int:
        expired = [n for n, t in self._entries.items() if now - t > self.window]
        for nonce in expired:
            del self._entries[nonce]
        return len(expired)

    def __len__(self) -> int:
        return len(self._entries)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_username_token(tok: UsernameToken, store: UserStore, cache: NonceCache,
                            now: datetime, skew: timedelta = DEFAULT_SKEW,
                            digest_order: DigestOrder = DigestOrder.PASSWORD_FIRST) -> Verdict:
    password = store.get_password(tok.username)
    if password is None:
        return Reject(TokenRejectReason.UNKNOWN_USER, tok.username)

    expected = password_digest(password, tok.nonce, tok.created, digest_order)
    if not hmac.compare_digest(expected.encode("ascii"), tok.password_digest.encode("utf-8")):
        return Reject(TokenRejectReason.BAD_DIGEST, tok.username)

    try:
        created = parse_timestamp(tok.created)
    except TokenParseError as e:
        return Reject(TokenRejectReason.STALE_CREATED, str(e))
    if abs(now - created) > skew:
        return Reject(TokenRejectReason.STALE_CREATED, tok.created)

    if not cache.check_and_insert(tok.nonce, now):
        return Reject(TokenRejectReason.REPLAYED_NONCE, tok.username)
    return ACCEPT


# ---------------------------------------------------------------------------
# XML mapping
# ---------------------------------------------------------------------------

def token_to_xml(tok: Token) -> XmlElement:
    if isinstance(tok, UsernameToken):
        return element(WSSE_NS, "UsernameToken", WSSE_PREFIX, children=[
            text_element(WSSE_NS, "Username", WSSE_PREFIX, tok.username),
            text_element(WSSE_NS, "Password", WSSE_PREFIX, tok.password_digest,
                         attributes=[(_TYPE, PASSWORD_DIGEST_TYPE)]),
            text_element(WSSE_NS, "Nonce", WSSE_PREFIX, crypto_sig.b64encode(tok.nonce),
                         attributes=[(_ENCODING_TYPE, BASE64_ENCODING_TYPE)]),
            text_element(WSU_NS, "Created", WSU_PREFIX, tok.created),
        ])
    if isinstance(tok, BinarySecurityToken):
        return text_element(WSSE_NS, "BinarySecurityToken", WSSE_PREFIX, tok.value, attributes=[
            (_VALUE_TYPE, tok.value_type),
            (_ENCODING_TYPE, tok.encoding_type),
            (WSU_ID, tok.id),
        ])
    if isinstance(tok, Timestamp):
        return element(WSU_NS, "Timestamp", WSU_PREFIX, attributes=[(WSU_ID, tok.id)], children=[
            text_element(WSU_NS, "Created", WSU_PREFIX, tok.created),
            text_element(WSU_NS, "Expires", WSU_PREFIX, tok.expires),
        ])
    raise TypeError(f"not a token: {type(tok).__name__}")


def _expect_children(elem: XmlElement, expected) -> list:
    """Element children must be exactly `expected` ((ns, local) pairs) in order,
    with no non-whitespace text in between."""
    if elem.text.strip():
        raise TokenParseError(f"unexpected text in {elem.name.local_name}")
    children = elem.element_children
    names = [c.name.key for c in children]
    if names != list(expected):
        got = ", ".join(local for _, local in names) or "nothing"
        want = ", ".join(local for _, local in expected)
        raise TokenParseError(f"{elem.name.local_name} must contain {want}; got {got}")
    return children


def _leaf_text(elem: XmlElement) -> str:
    if elem.element_children:
        raise TokenParseError(f"{elem.name.local_name} must not contain elements")
    return elem.text


def _required_attribute(elem: XmlElement, name: XmlName) -> str:
    value = elem.get(name.namespace_uri, name.local_name)
    if value is None:
        raise TokenParseError(f"{elem.name.local_name} is missing {name.qualified}")
    return value


def _check_attributes(elem: XmlElement, allowed) -> None:
    for attr_name, _ in elem.attributes:
        if attr_name.key not in allowed:
            raise TokenParseError(f"unexpected attribute {attr_name.qualified} on {elem.name.local_name}")


def token_from_xml(elem: XmlElement) -> Token:
    if elem.name.matches(WSSE_NS, "UsernameToken"):
        _check_attributes(elem, {WSU_ID.key})
        username, password, nonce, created = _expect_children(elem, [
            (WSSE_NS, "Username"), (WSSE_NS, "Password"), (WSSE_NS, "Nonce"), (WSU_NS, "Created"),
        ])
        _check_attributes(username, set())
        _check_attributes(password, {_TYPE.key})
        _check_attributes(nonce, {_ENCODING_TYPE.key})
        _check_attributes(created, set())
        if _required_attribute(password, _TYPE) != PASSWORD_DIGEST_TYPE:
            raise TokenParseError("only PasswordDigest passwords are supported")
        encoding = nonce.get("", "EncodingType")
        if encoding is not None and encoding != BASE64_ENCODING_TYPE:
            raise TokenParseError(f"unsupported nonce encoding {encoding}")
        try:
            nonce_bytes = crypto_sig.b64decode_strict(_leaf_text(nonce))
        except ValueError as e:
            raise TokenParseError(f"nonce is not base64: {e}") from e
        created_text = _leaf_text(created)
        parse_timestamp(created_text)
        name_text = _leaf_text(username)
        if not name_text:
            raise TokenParseError("empty Username")
        return UsernameToken(username=name_text, password_digest=_leaf_text(password),
                             nonce=nonce_bytes, created=created_text)

    if elem.name.matches(WSSE_NS, "BinarySecurityToken"):
        _check_attributes(elem, {_VALUE_TYPE.key, _ENCODING_TYPE.key, WSU_ID.key})
        value_type = _required_attribute(elem, _VALUE_TYPE)
        encoding_type = _required_attribute(elem, _ENCODING_TYPE)
        token_id = _required_attribute(elem, WSU_ID)
        if value_type != X509V3_VALUE_TYPE or encoding_type != BASE64_ENCODING_TYPE:
            raise TokenParseError(f"unsupported token type {value_type} / {encoding_type}")
        if not token_id:
            raise TokenParseError("BinarySecurityToken has an empty Id")
        token = BinarySecurityToken(id=token_id, value=_leaf_text(elem).strip(),
                                    value_type=value_type, encoding_type=encoding_type)
        token.certificate()
        return token

    if elem.name.matches(WSU_NS, "Timestamp"):
        _check_attributes(elem, {WSU_ID.key})
        created, expires = _expect_children(elem, [(WSU_NS, "Created"), (WSU_NS, "Expires")])
        _check_attributes(created, set())
        _check_attributes(expires, set())
        stamp = Timestamp(created=_leaf_text(created), expires=_leaf_text(expires),
                          id=_required_attribute(elem, WSU_ID))
        if not stamp.created_at < stamp.expires_at:
            raise TokenParseError("Timestamp expires before it is created")
        return stamp

    raise TokenParseError(f"unknown token element {elem.name.qualified}")
