#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Non-encrypted session over signed envelopes.

Three-message handshake:
  1. client -> server: Continue{nonce, session="", nr=1}
  2. server -> client: Continue{echoed nonce, session=<id>, nr=1}
  3. client -> server: operation + Continue{session=<id>, nr=2}

Nr is a per-sender counter: each side counts the messages it has sent in
the session, and a received Nr must be exactly one more than the last Nr
received from that peer. Either side ends the session with <SessionEnd/>.
"""

import hmac
import logging
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Callable, Dict, Optional, Sequence, Tuple

from src.security import crypto_sig
from src.security.constants import SESSION_NS, SESSION_PREFIX
from src.security.errors import InvalidPhase, MalformedContinue, NonceMismatch
from src.security.results import ACCEPT, Reject, SessionRejectReason, Verdict
from src.security.xml_model import XmlElement, element, text_element

logger = logging.getLogger(__name__)

NONCE_BYTES = 16
SESSION_RANDOM_BYTES = 16
DEFAULT_IDLE_TIMEOUT = timedelta(minutes=30)

EntropySource = Callable[[int], bytes]


class Role(str, Enum):
    CLIENT = "Client"
    SERVER = "Server"


class Phase(str, Enum):
    IDLE = "Idle"
    AWAIT_SERVER_CONTINUE = "AwaitServerContinue"
    AWAIT_CLIENT_CONFIRM = "AwaitClientConfirm"
    ESTABLISHED = "Established"
    ENDED = "Ended"


@dataclass
class SessionState:
    role: Role
    phase: Phase = Phase.IDLE
    session_id: Optional[str] = None
    client_nonce: Optional[bytes] = None
    nr_sent: int = 0
    nr_peer_last: int = 0
    last_activity: Optional[datetime] = None
    peer: Optional[str] = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @classmethod
    def client(cls) -> "SessionState":
        return cls(role=Role.CLIENT)

    @classmethod
    def server(cls) -> "SessionState":
        return cls(role=Role.SERVER)

    def _require(self, role: Optional[Role], *phases: Phase) -> None:
        if role is not None and self.role is not role:
            raise InvalidPhase(f"operation is not available to the {self.role.value.lower()}")
        if self.phase not in phases:
            wanted = " or ".join(p.value for p in phases)
            raise InvalidPhase(f"session is {self.phase.value}, expected {wanted}")

    def _move(self, phase: Phase) -> None:
        logger.debug(f"{self.role.value} session {self.session_id or '-'}: {self.phase.value} -> {phase.value}")
        self.phase = phase


@dataclass(frozen=True)
class ContinueElement:
    nonce: Optional[bytes]
    session: str
    nr: int

    def __post_init__(self):
        if isinstance(self.nr, bool) or not isinstance(self.nr, int) or self.nr < 1:
            raise ValueError(f"Nr must be a positive integer, got {self.nr!r}")

    @property
    def is_opening(self) -> bool:
        return self.nonce is not None and self.session == "" and self.nr == 1

    def to_xml(self) -> XmlElement:
        children = []
        if self.nonce is not None:
            children.append(text_element(SESSION_NS, "Nonce", SESSION_PREFIX, crypto_sig.b64encode(self.nonce)))
        children.append(text_element(SESSION_NS, "Session", SESSION_PREFIX, self.session))
        children.append(text_element(SESSION_NS, "Nr", SESSION_PREFIX, str(self.nr)))
        return element(SESSION_NS, "Continue", SESSION_PREFIX, children=children)

    @classmethod
    def from_xml(cls, elem: XmlElement) -> "ContinueElement":
        if not elem.name.matches(SESSION_NS, "Continue") or elem.attributes:
            raise MalformedContinue(f"not a Continue element: {elem.name.qualified}")
        if elem.text.strip():
            raise MalformedContinue("unexpected text in Continue")
        children = elem.element_children
        names = [c.name.key for c in children]
        expected = [(SESSION_NS, "Session"), (SESSION_NS, "Nr")]
        if names not in (expected, [(SESSION_NS, "Nonce")] + expected):
            raise MalformedContinue("Continue must contain [Nonce,] Session, Nr")
        for child in children:
            if child.element_children or child.attributes:
                raise MalformedContinue(f"{child.name.local_name} must be a plain text element")

        nonce = None
        if len(children) == 3:
            try:
                nonce = crypto_sig.b64decode_strict(children[0].text)
            except ValueError as e:
                raise MalformedContinue(f"Nonce is not base64: {e}") from e
        nr_text = children[-1].text
        if not nr_text.isascii() or not nr_text.isdigit() or nr_text.startswith("0"):
            raise MalformedContinue(f"Nr must be a positive decimal integer, got {nr_text!r}")
        return cls(nonce=nonce, session=children[-2].text, nr=int(nr_text))


def session_end_element() -> XmlElement:
    return element(SESSION_NS, "SessionEnd", SESSION_PREFIX)


def is_session_end(elem: XmlElement) -> bool:
    return elem.name.matches(SESSION_NS, "SessionEnd") and not elem.children and not elem.attributes


def split_session_elements(elements: Sequence[XmlElement]) -> Tuple[Optional[ContinueElement], bool]:
    """(Continue, SessionEnd present) from the trailing session elements of a Body."""
    found: Optional[ContinueElement] = None
    ended = False
    for elem in elements:
        if is_session_end(elem) and not ended:
            ended = True
        elif elem.name.matches(SESSION_NS, "Continue") and found is None:
            found = ContinueElement.from_xml(elem)
        else:
            raise MalformedContinue(f"unexpected session element {elem.name.qualified}")
    return found, ended


# ---------------------------------------------------------------------------
# State machine
# ---------------------------------------------------------------------------

def client_begin(state: SessionState, rng: EntropySource = os.urandom) -> ContinueElement:
    state._require(Role.CLIENT, Phase.IDLE)
    nonce = rng(NONCE_BYTES)
    if len(nonce) != NONCE_BYTES:
        raise ValueError("entropy source returned the wrong number of bytes")
    state.client_nonce = nonce
    state.nr_sent = 1
    state._move(Phase.AWAIT_SERVER_CONTINUE)
    return ContinueElement(nonce=nonce, session="", nr=1)


def new_session_id(now: datetime, rng: EntropySource = os.urandom) -> str:
    return f"{int(now.timestamp() * 1000)}-{rng(SESSION_RANDOM_BYTES).hex()}"


def server_accept(state: SessionState, incoming: ContinueElement, now: datetime,
                  rng: EntropySource = os.urandom) -> ContinueElement:
    state._require(Role.SERVER, Phase.IDLE)
    if not incoming.is_opening:
        raise MalformedContinue("an opening Continue needs a nonce, an empty Session and Nr 1")
    state.session_id = new_session_id(now, rng)
    state.client_nonce = incoming.nonce
    state.nr_sent = 1
    state.nr_peer_last = 1
    state.last_activity = now
    state._move(Phase.AWAIT_CLIENT_CONFIRM)
    return ContinueElement(nonce=incoming.nonce, session=state.session_id, nr=1)


def client_confirm(state: SessionState, incoming: ContinueElement) -> ContinueElement:
    state._require(Role.CLIENT, Phase.AWAIT_SERVER_CONTINUE)
    if incoming.nonce is None or not incoming.session or incoming.nr != 1:
        raise MalformedContinue("the server's Continue needs the echoed nonce, a Session and Nr 1")
    if not hmac.compare_digest(incoming.nonce, state.client_nonce):
        raise NonceMismatch("echoed nonce differs from the one sent")
    state.session_id = incoming.session
    state.nr_peer_last = 1
    state.nr_sent = 2
    state._move(Phase.ESTABLISHED)
    return ContinueElement(nonce=None, session=state.session_id, nr=2)


def on_message(state: SessionState, incoming: ContinueElement) -> Verdict:
    state._require(None, Phase.ESTABLISHED, Phase.AWAIT_CLIENT_CONFIRM)
    if state.phase is Phase.AWAIT_CLIENT_CONFIRM and state.role is not Role.SERVER:
        raise InvalidPhase("only the server waits for the client's confirmation")
    if incoming.session != state.session_id:
        return Reject(SessionRejectReason.WRONG_SESSION, incoming.session)
    if incoming.nonce is not None:
        raise MalformedContinue("established-phase Continue must not carry a nonce")
    if incoming.nr <= state.nr_peer_last:
        return Reject(SessionRejectReason.NR_REPLAY, f"Nr {incoming.nr} after {state.nr_peer_last}")
    if incoming.nr > state.nr_peer_last + 1:
        return Reject(SessionRejectReason.NR_GAP, f"Nr {incoming.nr} after {state.nr_peer_last}")
    state.nr_peer_last = incoming.nr
    if state.phase is Phase.AWAIT_CLIENT_CONFIRM:
        state._move(Phase.ESTABLISHED)
    return ACCEPT


def next_message(state: SessionState) -> ContinueElement:
    """Continue for the next message this side sends in an established session."""
    state._require(None, Phase.ESTABLISHED)
    state.nr_sent += 1
    return ContinueElement(nonce=None, session=state.session_id, nr=state.nr_sent)


def end_session(state: SessionState) -> XmlElement:
    state._require(None, Phase.ESTABLISHED)
    state._move(Phase.ENDED)
    return session_end_element()


# ---------------------------------------------------------------------------
# Server-side store
# ---------------------------------------------------------------------------

class SessionStore:
    """Server sessions keyed by session id, expired after `idle_timeout`
    without traffic. Opening nonces are remembered for the same period so a
    replayed first message cannot open a second session."""

    def __init__(self, idle_timeout: timedelta = DEFAULT_IDLE_TIMEOUT):
        self.idle_timeout = idle_timeout
        self._sessions: Dict[str, SessionState] = {}
        self._opening_nonces: Dict[bytes, datetime] = {}
        self._lock = threading.Lock()

    def open(self, incoming: ContinueElement, now: datetime, rng: EntropySource = os.urandom,
             peer: Optional[str] = None) -> Tuple[SessionState, ContinueElement]:
        state = SessionState(role=Role.SERVER, peer=peer)
        with self._lock:
            self._purge_locked(now)
            if incoming.nonce is not None and incoming.nonce in self._opening_nonces:
                raise NonceMismatch("opening nonce was already used")
            reply = server_accept(state, incoming, now, rng)
            if state.session_id in self._sessions:
                raise InvalidPhase(f"session id collision: {state.session_id}")
            self._opening_nonces[incoming.nonce] = now
            self._sessions[state.session_id] = state
        logger.debug(f"Opened session {state.session_id}")
        return state, reply

    def get(self, session_id: str, now: datetime) -> Optional[SessionState]:
        with self._lock:
            state = self._sessions.get(session_id)
            if state is None:
                return None
            if state.last_activity is not None and now - state.last_activity > self.idle_timeout:
                del self._sessions[session_id]
                logger.debug(f"Session {session_id} expired")
                return None
            state.last_activity = now
            return state

    def remove(self, session_id: str) -> None:
        with self._lock:
            self._sessions.pop(session_id, None)

    def purge(self, now: datetime) -> int:
        with self._lock:
            return self._purge_locked(now)

    def _purge_locked(self, now: datetime) -> int:
        stale = [sid for sid, s in self._sessions.items()
                 if s.last_activity is not None and now - s.last_activity > self.idle_timeout]
        for sid in stale:
            del self._sessions[sid]
        old_nonces = [n for n, t in self._opening_nonces.items() if now - t > self.idle_timeout]
        for nonce in old_nonces:
            del self._opening_nonces[nonce]
        return len(stale)

    def __len__(self) -> int:
        return len(self._sessions)
