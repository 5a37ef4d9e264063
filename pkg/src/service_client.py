#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
SOAP Service Client

Sends envelopes built for a security scenario to a service endpoint and
verifies the reply under the same scenario before returning it:
- TransportError: the HTTP exchange failed
- SoapFault: the service answered with a SOAP Fault
- VerificationFailed: the reply did not pass the scenario's checks
  (server-impersonation signal)

With use_session the non-encrypted session handshake runs first and the
payload travels as the operation of the third message.
"""

import logging
import os
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Callable, Dict, Optional, Sequence, Tuple

import requests
from cryptography import x509

from src.security import session_protocol, soap_security
from src.security.crypto_sig import TrustStore
from src.security.errors import SessionError, SoapFault, TransportError, VerificationFailed
from src.security.results import Reject
from src.security.session_protocol import SessionState
from src.security.soap_security import Credentials, ScenarioKind, ScenarioPolicy, VerifiedMessage
from src.security.wss_tokens import DigestOrder, NonceCache, UserStore
from src.security.xml_model import XmlElement

# Configure logging
logger = logging.getLogger(__name__)

SOAP_HEADERS = {'Content-Type': 'text/xml; charset=utf-8'}


@dataclass(frozen=True)
class InvokeResult:
    body: Optional[XmlElement]
    response_bytes: int
    elapsed_ms: float


class ServiceClient:
    """
    Client for one endpoint and one scenario.

    Not shared between threads; the load runner gives each virtual user its
    own client.
    """

    def __init__(self, url: str, policy: ScenarioPolicy, credentials: Credentials,
                 trust: Optional[TrustStore] = None, peer_cert: Optional[x509.Certificate] = None,
                 timeout: float = 30.0, digest_order: DigestOrder = DigestOrder.PASSWORD_FIRST,
                 clock: Optional[Callable[[], datetime]] = None, rng=os.urandom):
        self.url = url
        self.policy = policy
        self.credentials = credentials
        self.trust = trust or TrustStore()
        self.peer_cert = peer_cert
        self.timeout = timeout
        self.digest_order = digest_order
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.rng = rng
        self.http = requests.Session()
        # The reply to a UsernamePassword request carries a token for our own user.
        users = {}
        if credentials.username and credentials.password:
            users[credentials.username] = credentials.password
        self.users = UserStore(users)
        self.nonce_cache = NonceCache()

    def close(self):
        self.http.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
        return False

    def exchange(self, body: Optional[XmlElement],
                 session_elements: Sequence[XmlElement] = ()) -> Tuple[VerifiedMessage, InvokeResult]:
        """Build, send and verify one request/response pair."""
        now = self.clock()
        envelope = soap_security.build_envelope(
            body, self.policy, self.credentials, peer_cert=self.peer_cert, now=now,
            session_elements=session_elements, digest_order=self.digest_order, rng=self.rng)
        headers = dict(SOAP_HEADERS)
        headers['SOAPAction'] = f'"{body.name.local_name}"' if body is not None else '""'

        start = time.perf_counter()
        try:
            response = self.http.post(self.url, data=envelope, headers=headers, timeout=self.timeout)
            content = response.content
        except requests.exceptions.RequestException as e:
            raise TransportError(f"POST {self.url} failed: {e}") from e
        elapsed_ms = (time.perf_counter() - start) * 1000.0

        if response.status_code != 200:
            fault = soap_security.read_fault(content)
            if fault is not None:
                code, message = fault
                raise SoapFault(message, code=code)
            raise TransportError(f"POST {self.url} returned HTTP {response.status_code}")

        verified = soap_security.verify_envelope(
            content, self.policy, self.trust, self.users, self.nonce_cache,
            own_key=self.credentials.keypair, now=self.clock(), digest_order=self.digest_order)
        if isinstance(verified, Reject):
            raise VerificationFailed(verified.reason.value, verified.detail)
        return verified, InvokeResult(body=verified.body, response_bytes=len(content), elapsed_ms=elapsed_ms)

    def call(self, payload: XmlElement) -> InvokeResult:
        _, result = self.exchange(payload)
        return result

    def open_session(self) -> "ClientSession":
        if self.policy.kind is not ScenarioKind.HTTPI_SIGN:
            raise ValueError("sessions are only available under HttpiSign")
        session = ClientSession(self)
        session.open()
        return session

    def invoke(self, payload: XmlElement, use_session: bool = False) -> InvokeResult:
        if not use_session:
            return self.call(payload)
        session = self.open_session()
        try:
            return session.call(payload)
        finally:
            session.close()


class ClientSession:
    """Client side of one non-encrypted session."""

    def __init__(self, client: ServiceClient):
        self.client = client
        self.state = SessionState.client()
        self._pending: Optional[session_protocol.ContinueElement] = None

    @property
    def session_id(self) -> Optional[str]:
        return self.state.session_id

    def _reply_elements(self, verified: VerifiedMessage):
        try:
            return session_protocol.split_session_elements(verified.session_elements)
        except SessionError as e:
            raise VerificationFailed(type(e).__name__, str(e)) from e

    def open(self):
        opening = session_protocol.client_begin(self.state, self.client.rng)
        verified, _ = self.client.exchange(None, [opening.to_xml()])
        reply, _ = self._reply_elements(verified)
        if reply is None:
            raise VerificationFailed("MalformedContinue", "reply to the opening carries no Continue")
        try:
            self._pending = session_protocol.client_confirm(self.state, reply)
        except SessionError as e:
            raise VerificationFailed(type(e).__name__, str(e)) from e
        logger.debug(f"Session {self.state.session_id} established")

    def _next_continue(self):
        if self._pending is not None:
            pending, self._pending = self._pending, None
            return pending
        return session_protocol.next_message(self.state)

    def _check_reply(self, reply):
        if reply is None:
            raise VerificationFailed("MalformedContinue", "session reply carries no Continue")
        try:
            verdict = session_protocol.on_message(self.state, reply)
        except SessionError as e:
            raise VerificationFailed(type(e).__name__, str(e)) from e
        if isinstance(verdict, Reject):
            raise VerificationFailed(verdict.reason.value, verdict.detail)

    def call(self, payload: XmlElement) -> InvokeResult:
        outgoing = self._next_continue()
        verified, result = self.client.exchange(payload, [outgoing.to_xml()])
        reply, _ = self._reply_elements(verified)
        self._check_reply(reply)
        return result

    def close(self):
        if self.state.phase is not session_protocol.Phase.ESTABLISHED:
            return
        outgoing = self._next_continue()
        session_end = session_protocol.end_session(self.state)
        verified, _ = self.client.exchange(None, [session_end, outgoing.to_xml()])
        _, ended = self._reply_elements(verified)
        if not ended:
            raise VerificationFailed("MalformedContinue", "server did not confirm SessionEnd")
        logger.debug(f"Session {self.state.session_id} closed")


def invoke(target: str, payload: XmlElement, scenario: ScenarioPolicy, credentials: Credentials,
           use_session: bool = False, trust: Optional[TrustStore] = None,
           peer_cert: Optional[x509.Certificate] = None, **kwargs) -> Dict[str, object]:
    """
    Invoke one operation and verify the reply.

    Args:
        target: Service URL (http://host:port/service)
        payload: Operation element, e.g. <Echo><s>hi</s></Echo>
        scenario: Security scenario shared with the service
        credentials: Key pair and/or username and password
        use_session: Run the session handshake first (HttpiSign only)
        trust: Certificates trusted to sign replies
        peer_cert: The service certificate (SignEncrypt encrypts to it)

    Returns:
        dict with body, response_bytes and elapsed_ms
    """
    with ServiceClient(target, scenario, credentials, trust=trust, peer_cert=peer_cert, **kwargs) as client:
        result = client.invoke(payload, use_session=use_session)
    return {"body": result.body, "response_bytes": result.response_bytes, "elapsed_ms": result.elapsed_ms}
