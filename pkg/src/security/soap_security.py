#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
SOAP Envelope Security

Builds and verifies complete SOAP 1.1 envelopes for the four security
scenarios:
- NoSecurity: plain envelope, no header
- UsernamePassword: wsse:UsernameToken with PasswordDigest
- HttpiSign: Timestamp + BinarySecurityToken + RSA-SHA1 signature over
  Body and Timestamp, body in clear
- SignEncrypt: as HttpiSign, with the body content encrypted first so the
  signature covers the ciphertext

The receiver enforces its own policy; nothing about the policy is inferred
from the message. Verification returns a VerifiedMessage or a Reject, it does
not raise.
"""

import hmac
import logging
import os
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

from cryptography import x509

from src.security import crypto_sig, wss_tokens, xml_model
from src.security.constants import (
    AES256_CBC_ALGORITHM,
    C14N_ALGORITHM,
    DS_NS,
    DS_PREFIX,
    ENCRYPTED_CONTENT_TYPE,
    RSA_OAEP_ALGORITHM,
    RSA_SHA1_ALGORITHM,
    SESSION_NS,
    SHA1_ALGORITHM,
    SOAP_ENV_NS,
    SOAP_PREFIX,
    WSSE_NS,
    WSSE_PREFIX,
    WSU_NS,
    WSU_PREFIX,
    X509V3_VALUE_TYPE,
    XENC_NS,
    XENC_PREFIX,
)
from src.security.errors import (
    CryptoError,
    DecryptionFailed,
    InsufficientCredentials,
    KeyUnusable,
    SigningFailed,
    TokenParseError,
    XmlError,
)
from src.security.results import EnvelopeRejectReason, Reject
from src.security.wss_tokens import (
    WSU_ID,
    BinarySecurityToken,
    DigestOrder,
    NonceCache,
    Timestamp,
    UsernameToken,
    UserStore,
)
from src.security.xml_model import XmlElement, XmlName, element, text_element

logger = logging.getLogger(__name__)

_ALGORITHM = XmlName("", "Algorithm")
_URI = XmlName("", "URI")
_VALUE_TYPE = XmlName("", "ValueType")
_TYPE = XmlName("", "Type")
_MUST_UNDERSTAND = XmlName(SOAP_ENV_NS, "mustUnderstand", SOAP_PREFIX)

ANONYMOUS = "anonymous"


# ---------------------------------------------------------------------------
# Policies and credentials
# ---------------------------------------------------------------------------

class ScenarioKind(str, Enum):
    NO_SECURITY = "NoSecurity"
    USERNAME_PASSWORD = "UsernamePassword"
    HTTPI_SIGN = "HttpiSign"
    SIGN_ENCRYPT = "SignEncrypt"


_POLICY_FLAGS = {
    # kind: (sign_body, encrypt_body, require_username_token, require_timestamp)
    ScenarioKind.NO_SECURITY: (False, False, False, False),
    ScenarioKind.USERNAME_PASSWORD: (False, False, True, False),
    ScenarioKind.HTTPI_SIGN: (True, False, False, True),
    ScenarioKind.SIGN_ENCRYPT: (True, True, False, True),
}


@dataclass(frozen=True)
class ScenarioPolicy:
    kind: ScenarioKind
    sign_body: bool
    encrypt_body: bool
    require_username_token: bool
    require_timestamp: bool

    def __post_init__(self):
        flags = (self.sign_body, self.encrypt_body, self.require_username_token, self.require_timestamp)
        if _POLICY_FLAGS[ScenarioKind(self.kind)] != flags:
            raise ValueError(f"inconsistent flags for scenario {self.kind.value}")

    @classmethod
    def for_kind(cls, kind: ScenarioKind) -> "ScenarioPolicy":
        kind = ScenarioKind(kind)
        sign_body, encrypt_body, require_token, require_ts = _POLICY_FLAGS[kind]
        return cls(kind=kind, sign_body=sign_body, encrypt_body=encrypt_body,
                   require_username_token=require_token, require_timestamp=require_ts)

    @classmethod
    def from_name(cls, name: str) -> "ScenarioPolicy":
        """Accepts `HttpiSign`, `httpisign`, `httpi-sign`, `httpi_sign`, ..."""
        wanted = name.replace("-", "").replace("_", "").lower()
        for kind in ScenarioKind:
            if kind.value.lower() == wanted:
                return cls.for_kind(kind)
        choices = ", ".join(k.value for k in ScenarioKind)
        raise ValueError(f"unknown scenario {name!r} (choose from {choices})")

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def uses_keys(self) -> bool:
        return self.sign_body or self.encrypt_body


NO_SECURITY = ScenarioPolicy.for_kind(ScenarioKind.NO_SECURITY)
USERNAME_PASSWORD = ScenarioPolicy.for_kind(ScenarioKind.USERNAME_PASSWORD)
HTTPI_SIGN = ScenarioPolicy.for_kind(ScenarioKind.HTTPI_SIGN)
SIGN_ENCRYPT = ScenarioPolicy.for_kind(ScenarioKind.SIGN_ENCRYPT)
ALL_POLICIES = (NO_SECURITY, USERNAME_PASSWORD, HTTPI_SIGN, SIGN_ENCRYPT)


@dataclass(frozen=True)
class Credentials:
    keypair: Optional[crypto_sig.KeyPair] = None
    username: Optional[str] = None
    password: Optional[str] = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# Envelope model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Reference:
    uri: str
    transforms: Tuple[str, ...]
    digest_method: str
    digest_value: str

    @property
    def target_id(self) -> str:
        return self.uri[1:] if self.uri.startswith("#") else ""


@dataclass(frozen=True)
class XmlSignature:
    canonicalization_method: str
    signature_method: str
    references: Tuple[Reference, ...]
    signature_value: str
    signed_info: XmlElement
    token_reference: Optional[str] = None
    embedded_certificate: Optional[str] = None


@dataclass(frozen=True)
class SecurityHeader:
    timestamp: Optional[Timestamp] = None
    timestamp_element: Optional[XmlElement] = None
    username_token: Optional[UsernameToken] = None
    binary_token: Optional[BinarySecurityToken] = None
    signature: Optional[XmlSignature] = None

    @property
    def tokens(self) -> List[Union[UsernameToken, BinarySecurityToken]]:
        return [t for t in (self.username_token, self.binary_token) if t is not None]


@dataclass(frozen=True)
class SoapEnvelope:
    header: Optional[SecurityHeader]
    body: XmlElement
    body_id: Optional[str]
    root: XmlElement


@dataclass(frozen=True)
class VerifiedMessage:
    body: Optional[XmlElement]
    session_elements: Tuple[XmlElement, ...]
    authenticated_principal: str
    signer_certificate: Optional[x509.Certificate] = None
    username: Optional[str] = None

    def __bool__(self) -> bool:
        return True


class _Rejected(Exception):
    def __init__(self, reason: EnvelopeRejectReason, detail: str = ""):
        super().__init__(detail)
        self.reason = reason
        self.detail = detail


# ---------------------------------------------------------------------------
# Building
# ---------------------------------------------------------------------------

def _check_credentials(policy: ScenarioPolicy, credentials: Credentials,
                       peer_cert: Optional[x509.Certificate]) -> None:
    if policy.sign_body and credentials.keypair is None:
        raise InsufficientCredentials(f"{policy.name} requires a signing key pair")
    if policy.require_username_token and not (credentials.username and credentials.password):
        raise InsufficientCredentials(f"{policy.name} requires a username and password")
    if policy.encrypt_body and peer_cert is None:
        raise InsufficientCredentials(f"{policy.name} requires the peer certificate")


def _encrypted_data(body_children: Sequence[Union[XmlElement, str]],
                    peer_cert: x509.Certificate) -> XmlElement:
    wrapper = element(SOAP_ENV_NS, "Body", SOAP_PREFIX, children=body_children)
    payload = crypto_sig.encrypt_body(xml_model.serialize_element(wrapper), peer_cert)
    return element(XENC_NS, "EncryptedData", XENC_PREFIX, attributes=[(_TYPE, ENCRYPTED_CONTENT_TYPE)], children=[
        element(XENC_NS, "EncryptionMethod", XENC_PREFIX, attributes=[(_ALGORITHM, AES256_CBC_ALGORITHM)]),
        element(DS_NS, "KeyInfo", DS_PREFIX, children=[
            element(XENC_NS, "EncryptedKey", XENC_PREFIX, children=[
                element(XENC_NS, "EncryptionMethod", XENC_PREFIX, attributes=[(_ALGORITHM, RSA_OAEP_ALGORITHM)]),
                element(XENC_NS, "CipherData", XENC_PREFIX, children=[
                    text_element(XENC_NS, "CipherValue", XENC_PREFIX, crypto_sig.b64encode(payload.encrypted_key)),
                ]),
            ]),
        ]),
        element(XENC_NS, "CipherData", XENC_PREFIX, children=[
            text_element(XENC_NS, "CipherValue", XENC_PREFIX, crypto_sig.b64encode(payload.iv + payload.ciphertext)),
        ]),
    ])


def _reference_element(target_id: str, target: XmlElement) -> XmlElement:
    digest = crypto_sig.sha1_digest(xml_model.canonicalize(target))
    return element(DS_NS, "Reference", DS_PREFIX, attributes=[(_URI, f"#{target_id}")], children=[
        element(DS_NS, "Transforms", DS_PREFIX, children=[
            element(DS_NS, "Transform", DS_PREFIX, attributes=[(_ALGORITHM, C14N_ALGORITHM)]),
        ]),
        element(DS_NS, "DigestMethod", DS_PREFIX, attributes=[(_ALGORITHM, SHA1_ALGORITHM)]),
        text_element(DS_NS, "DigestValue", DS_PREFIX, crypto_sig.b64encode(digest)),
    ])


def _signature_element(targets: Sequence[Tuple[str, XmlElement]], keypair: crypto_sig.KeyPair,
                       token_id: str) -> XmlElement:
    signed_info = element(DS_NS, "SignedInfo", DS_PREFIX, children=[
        element(DS_NS, "CanonicalizationMethod", DS_PREFIX, attributes=[(_ALGORITHM, C14N_ALGORITHM)]),
        element(DS_NS, "SignatureMethod", DS_PREFIX, attributes=[(_ALGORITHM, RSA_SHA1_ALGORITHM)]),
        *(_reference_element(target_id, target) for target_id, target in targets),
    ])
    try:
        signature_value = crypto_sig.rsa_sha1_sign(xml_model.canonicalize(signed_info), keypair)
    except KeyUnusable as e:
        raise SigningFailed(str(e)) from e
    return element(DS_NS, "Signature", DS_PREFIX, children=[
        signed_info,
        text_element(DS_NS, "SignatureValue", DS_PREFIX, crypto_sig.b64encode(signature_value)),
        element(DS_NS, "KeyInfo", DS_PREFIX, children=[
            element(WSSE_NS, "SecurityTokenReference", WSSE_PREFIX, children=[
                element(WSSE_NS, "Reference", WSSE_PREFIX,
                        attributes=[(_URI, f"#{token_id}"), (_VALUE_TYPE, X509V3_VALUE_TYPE)]),
            ]),
        ]),
    ])


def build_envelope(body: Optional[XmlElement], policy: ScenarioPolicy, credentials: Credentials,
                   peer_cert: Optional[x509.Certificate] = None, now: Optional[datetime] = None,
                   session_elements: Sequence[XmlElement] = (),
                   digest_order: DigestOrder = DigestOrder.PASSWORD_FIRST,
                   timestamp_lifetime: timedelta = wss_tokens.DEFAULT_TIMESTAMP_LIFETIME,
                   rng=os.urandom) -> bytes:
    """Serialize a SOAP envelope for `body` under `policy`.

    session_elements (Continue / SessionEnd) are appended as the last Body
    children, inside the signed and encrypted region.

    Raises:
        InsufficientCredentials: credentials do not cover the policy
        SigningFailed: the key pair cannot produce a signature
    """
    now = now or datetime.now(timezone.utc)
    _check_credentials(policy, credentials, peer_cert)

    body_children: List[Union[XmlElement, str]] = []
    if body is not None:
        body_children.append(body)
    body_children.extend(session_elements)
    if not body_children:
        raise ValueError("envelope body must not be empty")

    body_id = wss_tokens.new_element_id("Body")
    if policy.encrypt_body:
        try:
            body_children = [_encrypted_data(body_children, peer_cert)]
        except CryptoError as e:
            raise SigningFailed(f"cannot encrypt body: {e}") from e
    body_elem = element(SOAP_ENV_NS, "Body", SOAP_PREFIX, attributes=[(WSU_ID, body_id)], children=body_children)

    declarations = [(SOAP_PREFIX, SOAP_ENV_NS), (WSU_PREFIX, WSU_NS)]
    security_children: List[XmlElement] = []
    timestamp_elem = None
    if policy.require_timestamp:
        timestamp_elem = wss_tokens.token_to_xml(Timestamp.issue(now, timestamp_lifetime))
        security_children.append(timestamp_elem)
    if policy.require_username_token:
        token = wss_tokens.make_username_token(credentials.username, credentials.password, now,
                                               rng=rng, digest_order=digest_order)
        security_children.append(wss_tokens.token_to_xml(token))
    if policy.sign_body:
        bst = BinarySecurityToken.from_certificate(credentials.keypair.certificate)
        security_children.append(wss_tokens.token_to_xml(bst))
        targets = [(body_id, body_elem)]
        if timestamp_elem is not None:
            targets.append((timestamp_elem.get(WSU_NS, "Id"), timestamp_elem))
        security_children.append(_signature_element(targets, credentials.keypair, bst.id))
    if policy.uses_keys:
        declarations.append((DS_PREFIX, DS_NS))
    if policy.encrypt_body:
        declarations.append((XENC_PREFIX, XENC_NS))

    envelope_children: List[XmlElement] = []
    if security_children:
        declarations.append((WSSE_PREFIX, WSSE_NS))
        security = element(WSSE_NS, "Security", WSSE_PREFIX,
                           attributes=[(_MUST_UNDERSTAND, "1")], children=security_children)
        envelope_children.append(element(SOAP_ENV_NS, "Header", SOAP_PREFIX, children=[security]))
    envelope_children.append(body_elem)

    envelope = element(SOAP_ENV_NS, "Envelope", SOAP_PREFIX, children=envelope_children,
                       namespace_declarations=declarations)
    raw = xml_model.serialize(xml_model.XmlDocument(envelope))
    logger.debug(f"Built {policy.name} envelope ({len(raw)} bytes)")
    return raw


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _element_children_only(elem: XmlElement, reason: EnvelopeRejectReason) -> List[XmlElement]:
    if elem.text.strip():
        raise _Rejected(reason, f"unexpected text in {elem.name.local_name}")
    return elem.element_children


def _single(elem: XmlElement, ns: str, local: str, reason: EnvelopeRejectReason) -> XmlElement:
    found = elem.find_all(ns, local)
    if len(found) != 1:
        raise _Rejected(reason, f"{elem.name.local_name} must contain exactly one {local}")
    return found[0]


def _parse_reference(elem: XmlElement) -> Reference:
    reason = EnvelopeRejectReason.SIGNATURE_INVALID
    children = _element_children_only(elem, reason)
    if [c.name.key for c in children] != [(DS_NS, "Transforms"), (DS_NS, "DigestMethod"), (DS_NS, "DigestValue")]:
        raise _Rejected(reason, "Reference must contain Transforms, DigestMethod, DigestValue")
    transforms_elem, digest_method, digest_value = children
    transforms = []
    for transform in _element_children_only(transforms_elem, reason):
        if not transform.name.matches(DS_NS, "Transform"):
            raise _Rejected(reason, f"unexpected {transform.name.local_name} in Transforms")
        transforms.append(transform.get("", "Algorithm", ""))
    return Reference(uri=elem.get("", "URI", ""), transforms=tuple(transforms),
                     digest_method=digest_method.get("", "Algorithm", ""),
                     digest_value=digest_value.text)


def _parse_signature(elem: XmlElement) -> XmlSignature:
    reason = EnvelopeRejectReason.SIGNATURE_INVALID
    children = _element_children_only(elem, reason)
    if [c.name.key for c in children] != [(DS_NS, "SignedInfo"), (DS_NS, "SignatureValue"), (DS_NS, "KeyInfo")]:
        raise _Rejected(reason, "Signature must contain SignedInfo, SignatureValue, KeyInfo")
    signed_info, signature_value, key_info = children

    info_children = _element_children_only(signed_info, reason)
    if len(info_children) < 3 or \
            not info_children[0].name.matches(DS_NS, "CanonicalizationMethod") or \
            not info_children[1].name.matches(DS_NS, "SignatureMethod"):
        raise _Rejected(reason, "malformed SignedInfo")
    references = []
    for ref in info_children[2:]:
        if not ref.name.matches(DS_NS, "Reference"):
            raise _Rejected(reason, f"unexpected {ref.name.local_name} in SignedInfo")
        references.append(_parse_reference(ref))

    token_reference = embedded = None
    key_children = _element_children_only(key_info, reason)
    if len(key_children) != 1:
        raise _Rejected(reason, "KeyInfo must hold exactly one key reference")
    key_holder = key_children[0]
    if key_holder.name.matches(WSSE_NS, "SecurityTokenReference"):
        token_reference = _single(key_holder, WSSE_NS, "Reference", reason).get("", "URI")
    elif key_holder.name.matches(DS_NS, "X509Data"):
        embedded = _single(key_holder, DS_NS, "X509Certificate", reason).text.strip()
    else:
        raise _Rejected(reason, f"unsupported KeyInfo content {key_holder.name.local_name}")

    return XmlSignature(
        canonicalization_method=info_children[0].get("", "Algorithm", ""),
        signature_method=info_children[1].get("", "Algorithm", ""),
        references=tuple(references),
        signature_value=signature_value.text,
        signed_info=signed_info,
        token_reference=token_reference,
        embedded_certificate=embedded,
    )


def _parse_security(security: XmlElement) -> SecurityHeader:
    parts: Dict[Tuple[str, str], XmlElement] = {}
    for child in _element_children_only(security, EnvelopeRejectReason.POLICY_VIOLATION):
        known = child.name.key in {(WSU_NS, "Timestamp"), (WSSE_NS, "UsernameToken"),
                                   (WSSE_NS, "BinarySecurityToken"), (DS_NS, "Signature")}
        if not known:
            raise _Rejected(EnvelopeRejectReason.POLICY_VIOLATION,
                            f"unexpected security header element {child.name.qualified}")
        if child.name.key in parts:
            raise _Rejected(EnvelopeRejectReason.POLICY_VIOLATION, f"duplicate {child.name.local_name}")
        parts[child.name.key] = child

    try:
        timestamp_elem = parts.get((WSU_NS, "Timestamp"))
        username_elem = parts.get((WSSE_NS, "UsernameToken"))
        bst_elem = parts.get((WSSE_NS, "BinarySecurityToken"))
        return SecurityHeader(
            timestamp=wss_tokens.token_from_xml(timestamp_elem) if timestamp_elem is not None else None,
            timestamp_element=timestamp_elem,
            username_token=wss_tokens.token_from_xml(username_elem) if username_elem is not None else None,
            binary_token=wss_tokens.token_from_xml(bst_elem) if bst_elem is not None else None,
            signature=_parse_signature(parts[(DS_NS, "Signature")]) if (DS_NS, "Signature") in parts else None,
        )
    except TokenParseError as e:
        raise _Rejected(EnvelopeRejectReason.PARSE_ERROR, str(e)) from e


def parse_envelope(raw: bytes, read_header: bool = True) -> SoapEnvelope:
    try:
        root = xml_model.parse(raw).root
    except XmlError as e:
        raise _Rejected(EnvelopeRejectReason.PARSE_ERROR, str(e)) from e

    if not root.name.matches(SOAP_ENV_NS, "Envelope"):
        raise _Rejected(EnvelopeRejectReason.PARSE_ERROR, "root element is not a SOAP 1.1 Envelope")
    children = _element_children_only(root, EnvelopeRejectReason.PARSE_ERROR)
    names = [c.name.key for c in children]
    if names not in ([(SOAP_ENV_NS, "Body")], [(SOAP_ENV_NS, "Header"), (SOAP_ENV_NS, "Body")]):
        raise _Rejected(EnvelopeRejectReason.PARSE_ERROR, "Envelope must contain an optional Header and one Body")
    body = children[-1]

    header = None
    if read_header and len(children) == 2:
        securities = []
        for entry in _element_children_only(children[0], EnvelopeRejectReason.POLICY_VIOLATION):
            if not entry.name.matches(WSSE_NS, "Security"):
                raise _Rejected(EnvelopeRejectReason.POLICY_VIOLATION,
                                f"unexpected header entry {entry.name.qualified}")
            securities.append(entry)
        if len(securities) > 1:
            raise _Rejected(EnvelopeRejectReason.POLICY_VIOLATION, "more than one Security header")
        header = _parse_security(securities[0]) if securities else SecurityHeader()
    elif len(children) == 2:
        # Header entries are ignored, but not ones the sender marked mandatory.
        for entry in children[0].element_children:
            if entry.get(SOAP_ENV_NS, "mustUnderstand", "0").strip() in ("1", "true"):
                raise _Rejected(EnvelopeRejectReason.POLICY_VIOLATION,
                                f"header entry {entry.name.qualified} must be understood")
    return SoapEnvelope(header=header, body=body, body_id=body.get(WSU_NS, "Id"), root=root)


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

def _check_policy_shape(header: Optional[SecurityHeader], policy: ScenarioPolicy) -> SecurityHeader:
    header = header or SecurityHeader()
    present = {
        "Timestamp": header.timestamp is not None,
        "UsernameToken": header.username_token is not None,
        "BinarySecurityToken": header.binary_token is not None,
        "Signature": header.signature is not None,
    }
    allowed = {
        "Timestamp": policy.require_timestamp,
        "UsernameToken": policy.require_username_token,
        "BinarySecurityToken": policy.sign_body,
        "Signature": policy.sign_body,
    }
    for part, is_allowed in allowed.items():
        if present[part] and not is_allowed:
            raise _Rejected(EnvelopeRejectReason.POLICY_VIOLATION, f"{part} is not part of {policy.name}")
        # BinarySecurityToken may be replaced by a certificate embedded in KeyInfo.
        if is_allowed and not present[part] and part != "BinarySecurityToken":
            raise _Rejected(EnvelopeRejectReason.POLICY_VIOLATION, f"{policy.name} requires {part}")
    return header


def _check_timestamp(stamp: Timestamp, now: datetime, skew: timedelta) -> None:
    # Arithmetic stays on `now`: stamp values may be datetime.min or datetime.max.
    if not (stamp.created_at <= now + skew and now - skew <= stamp.expires_at):
        raise _Rejected(EnvelopeRejectReason.STALE_TIMESTAMP, f"{stamp.created} .. {stamp.expires}")


def _elements_by_id(root: XmlElement) -> Dict[str, List[XmlElement]]:
    index: Dict[str, List[XmlElement]] = {}
    for elem in root.iter():
        elem_id = elem.get(WSU_NS, "Id")
        if elem_id is not None:
            index.setdefault(elem_id, []).append(elem)
    return index


def _check_signature(envelope: SoapEnvelope, header: SecurityHeader) -> x509.Certificate:
    sig = header.signature
    if sig.canonicalization_method != C14N_ALGORITHM or sig.signature_method != RSA_SHA1_ALGORITHM:
        raise _Rejected(EnvelopeRejectReason.SIGNATURE_INVALID, "unsupported signature algorithms")

    index = _elements_by_id(envelope.root)
    covered = set()
    for ref in sig.references:
        if ref.transforms != (C14N_ALGORITHM,) or ref.digest_method != SHA1_ALGORITHM:
            raise _Rejected(EnvelopeRejectReason.SIGNATURE_INVALID, f"unsupported transforms for {ref.uri}")
        targets = index.get(ref.target_id, [])
        if len(targets) > 1:
            raise _Rejected(EnvelopeRejectReason.POLICY_VIOLATION, f"id {ref.target_id} is not unique")
        if not targets or ref.target_id in covered:
            raise _Rejected(EnvelopeRejectReason.DIGEST_MISMATCH, f"reference {ref.uri} does not resolve")
        covered.add(ref.target_id)
        try:
            expected = crypto_sig.b64decode_strict(ref.digest_value)
        except ValueError as e:
            raise _Rejected(EnvelopeRejectReason.DIGEST_MISMATCH, f"{ref.uri}: {e}") from e
        actual = crypto_sig.sha1_digest(xml_model.canonicalize(targets[0]))
        if not hmac.compare_digest(expected, actual):
            raise _Rejected(EnvelopeRejectReason.DIGEST_MISMATCH, ref.uri)

    required = {envelope.body_id}
    if header.timestamp_element is not None:
        required.add(header.timestamp_element.get(WSU_NS, "Id"))
    if None in required or covered != required:
        raise _Rejected(EnvelopeRejectReason.POLICY_VIOLATION, "signature must cover exactly Body and Timestamp")

    cert = _resolve_signing_certificate(header)
    try:
        signature_value = crypto_sig.b64decode_strict(sig.signature_value)
    except ValueError as e:
        raise _Rejected(EnvelopeRejectReason.SIGNATURE_INVALID, str(e)) from e
    if not crypto_sig.rsa_sha1_verify(xml_model.canonicalize(sig.signed_info), signature_value, cert):
        raise _Rejected(EnvelopeRejectReason.SIGNATURE_INVALID, crypto_sig.certificate_subject_name(cert))
    return cert


def _resolve_signing_certificate(header: SecurityHeader) -> x509.Certificate:
    sig = header.signature
    try:
        if sig.token_reference is not None:
            bst = header.binary_token
            if bst is None or sig.token_reference != f"#{bst.id}":
                raise _Rejected(EnvelopeRejectReason.SIGNATURE_INVALID,
                                f"KeyInfo reference {sig.token_reference} does not resolve")
            return bst.certificate()
        der = crypto_sig.b64decode_strict(sig.embedded_certificate or "")
        return crypto_sig.load_der_certificate(der)
    except (TokenParseError, CryptoError, ValueError) as e:
        raise _Rejected(EnvelopeRejectReason.SIGNATURE_INVALID, f"signing certificate: {e}") from e


def _cipher_value(holder: XmlElement) -> bytes:
    cipher_data = _single(holder, XENC_NS, "CipherData", EnvelopeRejectReason.DECRYPTION_FAILED)
    value = _single(cipher_data, XENC_NS, "CipherValue", EnvelopeRejectReason.DECRYPTION_FAILED)
    try:
        return crypto_sig.b64decode_strict(value.text)
    except ValueError as e:
        raise _Rejected(EnvelopeRejectReason.DECRYPTION_FAILED, str(e)) from e


def _decrypt_body(body: XmlElement, own_key: Optional[crypto_sig.KeyPair]) -> List[Union[XmlElement, str]]:
    children = _element_children_only(body, EnvelopeRejectReason.POLICY_VIOLATION)
    if len(children) != 1 or not children[0].name.matches(XENC_NS, "EncryptedData"):
        raise _Rejected(EnvelopeRejectReason.POLICY_VIOLATION, "Body must carry a single EncryptedData")
    if own_key is None:
        raise _Rejected(EnvelopeRejectReason.DECRYPTION_FAILED, "no private key configured")
    encrypted = children[0]
    reason = EnvelopeRejectReason.DECRYPTION_FAILED
    method = _single(encrypted, XENC_NS, "EncryptionMethod", reason)
    key_info = _single(encrypted, DS_NS, "KeyInfo", reason)
    encrypted_key = _single(key_info, XENC_NS, "EncryptedKey", reason)
    key_method = _single(encrypted_key, XENC_NS, "EncryptionMethod", reason)
    if method.get("", "Algorithm") != AES256_CBC_ALGORITHM or key_method.get("", "Algorithm") != RSA_OAEP_ALGORITHM:
        raise _Rejected(reason, "unsupported encryption algorithms")

    iv_and_ciphertext = _cipher_value(encrypted)
    payload = crypto_sig.EncryptedPayload(
        encrypted_key=_cipher_value(encrypted_key),
        iv=iv_and_ciphertext[:crypto_sig.IV_BYTES],
        ciphertext=iv_and_ciphertext[crypto_sig.IV_BYTES:],
    )
    try:
        plaintext = crypto_sig.decrypt_body(payload, own_key)
        wrapper = xml_model.parse(plaintext).root
    except (DecryptionFailed, XmlError) as e:
        raise _Rejected(reason, str(e)) from e
    if not wrapper.name.matches(SOAP_ENV_NS, "Body"):
        raise _Rejected(reason, "decrypted content is not a Body")
    return list(wrapper.children)


def _split_body(children: Sequence[Union[XmlElement, str]]) -> Tuple[Optional[XmlElement], Tuple[XmlElement, ...]]:
    elements = []
    for child in children:
        if isinstance(child, str):
            if child.strip():
                raise _Rejected(EnvelopeRejectReason.PARSE_ERROR, "unexpected text in Body")
            continue
        elements.append(child)
    split = len(elements)
    while split > 0 and elements[split - 1].name.namespace_uri == SESSION_NS:
        split -= 1
    payload, session = elements[:split], tuple(elements[split:])
    if len(payload) > 1:
        raise _Rejected(EnvelopeRejectReason.POLICY_VIOLATION, "Body must carry a single operation element")
    if not payload and not session:
        raise _Rejected(EnvelopeRejectReason.PARSE_ERROR, "empty Body")
    return (payload[0] if payload else None), session


def verify_envelope(raw: bytes, policy: ScenarioPolicy, trust: crypto_sig.TrustStore, users: UserStore,
                    cache: NonceCache, own_key: Optional[crypto_sig.KeyPair] = None,
                    now: Optional[datetime] = None, skew: timedelta = wss_tokens.DEFAULT_SKEW,
                    digest_order: DigestOrder = DigestOrder.PASSWORD_FIRST) -> Union[VerifiedMessage, Reject]:
    """Run the inbound pipeline for `policy`.

    Order: parse, timestamp freshness, username token, reference digests
    and signature, trust, then decryption. Digests and signature are
    checked over the received ciphertext, so tampering is rejected before
    any decryption is attempted.
    """
    now = now or datetime.now(timezone.utc)
    try:
        envelope = parse_envelope(raw, read_header=policy.kind is not ScenarioKind.NO_SECURITY)
        header = _check_policy_shape(envelope.header, policy)

        if policy.require_timestamp:
            _check_timestamp(header.timestamp, now, skew)

        username = None
        if policy.require_username_token:
            verdict = wss_tokens.validate_username_token(header.username_token, users, cache, now,
                                                         skew=skew, digest_order=digest_order)
            if not verdict:
                raise _Rejected(EnvelopeRejectReason.TOKEN_INVALID, str(verdict))
            username = header.username_token.username

        signer = None
        if policy.sign_body:
            signer = _check_signature(envelope, header)
            if not trust.is_trusted(signer) or not crypto_sig.certificate_is_current(signer, now):
                raise _Rejected(EnvelopeRejectReason.UNTRUSTED_CERTIFICATE,
                                crypto_sig.certificate_subject_name(signer))

        body_children = list(envelope.body.children)
        if policy.encrypt_body:
            body_children = _decrypt_body(envelope.body, own_key)
        payload, session_elements = _split_body(body_children)
    except _Rejected as rejected:
        logger.warning(f"Rejected {policy.name} envelope: {rejected.reason.value}"
                       + (f" ({rejected.detail})" if rejected.detail else ""))
        return Reject(rejected.reason, rejected.detail)

    if signer is not None:
        principal = crypto_sig.certificate_subject_name(signer)
    else:
        principal = username or ANONYMOUS
    return VerifiedMessage(body=payload, session_elements=session_elements,
                           authenticated_principal=principal, signer_certificate=signer, username=username)


# ---------------------------------------------------------------------------
# SOAP 1.1 faults
# ---------------------------------------------------------------------------

CLIENT_FAULT = f"{SOAP_PREFIX}:Client"
SERVER_FAULT = f"{SOAP_PREFIX}:Server"


def build_fault(message: str, code: str = CLIENT_FAULT) -> bytes:
    fault = element(SOAP_ENV_NS, "Fault", SOAP_PREFIX, children=[
        text_element("", "faultcode", "", code),
        text_element("", "faultstring", "", message),
    ])
    envelope = element(SOAP_ENV_NS, "Envelope", SOAP_PREFIX,
                       namespace_declarations=[(SOAP_PREFIX, SOAP_ENV_NS)],
                       children=[element(SOAP_ENV_NS, "Body", SOAP_PREFIX, children=[fault])])
    return xml_model.serialize(xml_model.XmlDocument(envelope))


def reject_fault(rejected: Reject) -> bytes:
    return build_fault(str(rejected), CLIENT_FAULT)


def read_fault(raw: bytes) -> Optional[Tuple[str, str]]:
    """(faultcode, faultstring) if raw is a SOAP Fault envelope, else None."""
    try:
        envelope = parse_envelope(raw, read_header=False)
    except _Rejected:
        return None
    fault = envelope.body.find(SOAP_ENV_NS, "Fault")
    if fault is None:
        return None
    code = fault.find("", "faultcode")
    message = fault.find("", "faultstring")
    return (code.text if code is not None else "", message.text if message is not None else "")
