#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
SOAP Service Server

Flask application hosting the sample web service at POST /service under one
security scenario. For every request:
- verify the envelope under the configured policy
- run the session protocol when the Body carries Continue / SessionEnd
- dispatch the operation (Echo, Add)
- build the response envelope under the same policy

Verification failures are answered with HTTP 500 and a SOAP 1.1 Fault whose
faultstring names the reject reason.
"""

import logging
import threading
from datetime import datetime, timezone
from typing import Callable, List, Optional, Tuple

from flask import Flask, Response, jsonify, request
from werkzeug.serving import make_server

from src.security import session_protocol, soap_security
from src.security.constants import SERVICE_NS
from src.security.errors import BindFailed, Error, MalformedContinue, SessionError
from src.security.results import EnvelopeRejectReason, Reject, SessionRejectReason
from src.security.session_protocol import ContinueElement, SessionStore
from src.security.soap_security import Credentials, ScenarioKind, VerifiedMessage
from src.security.xml_model import XmlElement, element, text_element
from src.utils.config import SecurityMaterials, ServiceConfig
from src.utils.monitoring import ServiceMetrics, metrics_payload
from src.utils.redis_cache import create_nonce_cache

# Configure logging
logger = logging.getLogger(__name__)

SOAP_CONTENT_TYPE = "text/xml; charset=utf-8"
SERVICE_PREFIX = "svc"


class OperationFault(Error):
    """The request was authentic but the operation cannot be performed."""


class _SessionRejected(Exception):
    def __init__(self, reject: Reject):
        super().__init__(str(reject))
        self.reject = reject


# ---------------------------------------------------------------------------
# Sample service operations
# ---------------------------------------------------------------------------

def _response_element(request_elem: XmlElement, local_name: str, children) -> XmlElement:
    name = request_elem.name
    return element(name.namespace_uri, local_name, name.prefix, children=children)


def echo(request_elem: XmlElement) -> XmlElement:
    return _response_element(request_elem, "EchoResponse", request_elem.children)


def add(request_elem: XmlElement) -> XmlElement:
    operands = []
    for local in ("a", "b"):
        found = [c for c in request_elem.element_children if c.name.local_name == local]
        if len(found) != 1:
            raise OperationFault(f"Add requires exactly one <{local}>")
        try:
            operands.append(int(found[0].text.strip()))
        except ValueError:
            raise OperationFault(f"<{local}> is not an integer: {found[0].text!r}")
    result = text_element(request_elem.name.namespace_uri, "result", request_elem.name.prefix,
                          str(operands[0] + operands[1]))
    return _response_element(request_elem, "AddResponse", [result])


OPERATIONS = {
    "Echo": echo,
    "Add": add,
}


def echo_request(text: str) -> XmlElement:
    return element(SERVICE_NS, "Echo", SERVICE_PREFIX,
                   children=[text_element(SERVICE_NS, "s", SERVICE_PREFIX, text)])


def add_request(a: int, b: int) -> XmlElement:
    return element(SERVICE_NS, "Add", SERVICE_PREFIX, children=[
        text_element(SERVICE_NS, "a", SERVICE_PREFIX, str(a)),
        text_element(SERVICE_NS, "b", SERVICE_PREFIX, str(b)),
    ])


def dispatch(request_elem: Optional[XmlElement]) -> XmlElement:
    if request_elem is None:
        raise OperationFault("Body carries no operation")
    operation = OPERATIONS.get(request_elem.name.local_name)
    if operation is None:
        raise OperationFault(f"unknown operation {request_elem.name.local_name}")
    return operation(request_elem)


# ---------------------------------------------------------------------------
# Request pipeline
# ---------------------------------------------------------------------------

class SoapService:
    """Scenario-bound request handler shared by all Flask worker threads."""

    def __init__(self, config: ServiceConfig, materials: Optional[SecurityMaterials] = None,
                 nonce_cache=None, session_store: Optional[SessionStore] = None,
                 clock: Optional[Callable[[], datetime]] = None):
        self.config = config
        self.policy = config.policy
        self.materials = materials or SecurityMaterials.load(config)
        self.nonce_cache = nonce_cache or create_nonce_cache(config.redis_url, config.nonce_window)
        self.sessions = session_store or SessionStore(config.session_idle)
        self.clock = clock or (lambda: datetime.now(timezone.utc))
        self.metrics = ServiceMetrics(self.policy.name)

    @property
    def sessions_enabled(self) -> bool:
        return self.config.enable_sessions and self.policy.kind is ScenarioKind.HTTPI_SIGN

    def handle(self, raw: bytes) -> Tuple[int, bytes]:
        """Process one POSTed envelope; returns (HTTP status, response bytes)."""
        with self.metrics.measure_request() as timer:
            try:
                now = self.clock()
                verified = soap_security.verify_envelope(
                    raw, self.policy, self.materials.trust, self.materials.users, self.nonce_cache,
                    own_key=self.materials.keypair, now=now, skew=self.config.clock_skew,
                    digest_order=self.config.digest_order)
                if isinstance(verified, Reject):
                    timer.outcome = "rejected"
                    return self._reject(verified)

                if verified.session_elements:
                    body, session_elements = self._session_step(verified, now)
                else:
                    body, session_elements = dispatch(verified.body), []
                response = self._respond(verified, body, session_elements, now)
                timer.outcome = "ok"
                return 200, response
            except _SessionRejected as e:
                timer.outcome = "rejected"
                return self._reject(e.reject)
            except (OperationFault, SessionError) as e:
                timer.outcome = "rejected"
                logger.warning(f"Client fault: {type(e).__name__}: {e}")
                return 500, soap_security.build_fault(f"{type(e).__name__}: {e}", soap_security.CLIENT_FAULT)
            except Error as e:
                logger.error(f"Error processing request: {type(e).__name__}: {e}")
                return 500, soap_security.build_fault(f"{type(e).__name__}: {e}", soap_security.SERVER_FAULT)
            except Exception:
                logger.exception("Unexpected error processing request")
                return 500, soap_security.build_fault("InternalError", soap_security.SERVER_FAULT)

    def _reject(self, rejected: Reject) -> Tuple[int, bytes]:
        self.metrics.track_rejection(rejected.reason.value)
        return 500, soap_security.reject_fault(rejected)

    def _session_step(self, verified: VerifiedMessage, now: datetime) -> Tuple[Optional[XmlElement], List[XmlElement]]:
        if not self.sessions_enabled:
            raise _SessionRejected(Reject(EnvelopeRejectReason.POLICY_VIOLATION, "sessions are not enabled"))
        incoming, ended = session_protocol.split_session_elements(verified.session_elements)
        if incoming is None:
            raise MalformedContinue("session message without Continue")

        if incoming.is_opening:
            if verified.body is not None or ended:
                raise MalformedContinue("the opening message carries only Continue")
            state, reply = self.sessions.open(incoming, now, peer=verified.authenticated_principal)
            self.metrics.set_active_sessions(len(self.sessions))
            logger.info(f"Session {state.session_id} opened for {verified.authenticated_principal}")
            return None, [reply.to_xml()]

        state = self.sessions.get(incoming.session, now)
        if state is None:
            raise _SessionRejected(Reject(SessionRejectReason.WRONG_SESSION, "unknown or expired session"))
        with state.lock:
            if state.peer != verified.authenticated_principal:
                raise _SessionRejected(Reject(SessionRejectReason.WRONG_SESSION, "session belongs to another peer"))
            verdict = session_protocol.on_message(state, incoming)
            if isinstance(verdict, Reject):
                raise _SessionRejected(verdict)
            if ended:
                session_end = session_protocol.end_session(state)
                self.sessions.remove(state.session_id)
                self.metrics.set_active_sessions(len(self.sessions))
                logger.info(f"Session {state.session_id} ended by {verified.authenticated_principal}")
                return None, [session_end]
            body = dispatch(verified.body)
            reply: ContinueElement = session_protocol.next_message(state)
        return body, [reply.to_xml()]

    def _respond(self, verified: VerifiedMessage, body: Optional[XmlElement],
                 session_elements: List[XmlElement], now: datetime) -> bytes:
        username = password = None
        if self.policy.require_username_token:
            username = verified.username
            password = self.materials.users.get_password(username)
        credentials = Credentials(keypair=self.materials.keypair, username=username, password=password)
        return soap_security.build_envelope(
            body, self.policy, credentials, peer_cert=verified.signer_certificate, now=now,
            session_elements=session_elements, digest_order=self.config.digest_order,
            timestamp_lifetime=self.config.timestamp_ttl)


# ---------------------------------------------------------------------------
# Flask application
# ---------------------------------------------------------------------------

def create_app(config: ServiceConfig, service: Optional[SoapService] = None) -> Flask:
    """
    Create the Flask application for a configured service.

    Args:
        config: Validated service configuration
        service: Pre-built SoapService (tests inject clocks and stores this way)

    Returns:
        Flask application
    """
    service = service or SoapService(config)
    app = Flask(__name__)
    app.config["SOAP_SERVICE"] = service

    @app.route('/service', methods=['POST'])
    def soap_endpoint():
        status, payload = service.handle(request.get_data(cache=False))
        return Response(payload, status=status, content_type=SOAP_CONTENT_TYPE)

    @app.route('/health')
    def health_check():
        return jsonify({"status": "healthy", "scenario": service.policy.name,
                        "sessions": service.sessions_enabled})

    @app.route('/metrics')
    def metrics():
        payload, content_type = metrics_payload()
        return Response(payload, content_type=content_type)

    return app


class ServerHandle:
    """A running server: background thread plus shutdown."""

    def __init__(self, server, thread: threading.Thread, service: SoapService):
        self.server = server
        self.thread = thread
        self.service = service

    @property
    def host(self) -> str:
        return self.server.host

    @property
    def port(self) -> int:
        return self.server.server_port

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}/service"

    def shutdown(self):
        self.server.shutdown()
        self.thread.join(timeout=5)
        self.server.server_close()
        logger.info(f"Server on port {self.port} stopped")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.shutdown()
        return False


def serve(config: ServiceConfig, service: Optional[SoapService] = None) -> ServerHandle:
    """
    Start the threaded HTTP server in the background.

    Port 0 binds an ephemeral port; read it back from the handle.

    Raises:
        ConfigError: security materials cannot be loaded
        BindFailed: the listen address cannot be bound
    """
    service = service or SoapService(config)
    app = create_app(config, service)
    try:
        server = make_server(config.host, config.port, app, threaded=True)
    except (OSError, SystemExit) as e:
        raise BindFailed(f"cannot bind {config.listen_address}: {e}") from e

    thread = threading.Thread(target=server.serve_forever, name="soap-server", daemon=True)
    thread.start()
    handle = ServerHandle(server, thread, service)
    logger.info(f"Serving {config.policy.name} at {handle.url}")
    return handle
