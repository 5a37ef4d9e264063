#!/usr/bin/env python
# -*- coding: utf-8 -*-

import itertools
import re
from datetime import datetime, timedelta, timezone

import pytest

from src.security.errors import InvalidPhase, MalformedContinue, NonceMismatch, SessionError
from src.security.results import SessionRejectReason
from src.security.session_protocol import (
    ContinueElement,
    Phase,
    SessionState,
    SessionStore,
    client_begin,
    client_confirm,
    end_session,
    is_session_end,
    new_session_id,
    next_message,
    on_message,
    server_accept,
    session_end_element,
    split_session_elements,
)
from src.security.xml_model import parse, serialize_element

NOW = datetime(2013, 3, 1, 9, 0, 0, tzinfo=timezone.utc)
SESSION_ID_RE = re.compile(r"^[0-9]+-[0-9a-f]{32}$")


def established_pair():
    """Client and server states after the three-message handshake."""
    client, server = SessionState.client(), SessionState.server()
    opening = client_begin(client)
    answer = server_accept(server, opening, NOW)
    confirm = client_confirm(client, answer)
    assert on_message(server, confirm)
    return client, server


class TestHandshake:
    def test_three_messages(self):
        client, server = SessionState.client(), SessionState.server()
        opening = client_begin(client)
        assert opening.is_opening
        assert client.phase is Phase.AWAIT_SERVER_CONTINUE

        answer = server_accept(server, opening, NOW)
        assert answer.nonce == opening.nonce
        assert answer.nr == 1
        assert SESSION_ID_RE.match(answer.session)
        assert server.phase is Phase.AWAIT_CLIENT_CONFIRM

        confirm = client_confirm(client, answer)
        assert confirm == ContinueElement(nonce=None, session=answer.session, nr=2)
        assert client.phase is Phase.ESTABLISHED

        assert on_message(server, confirm)
        assert server.phase is Phase.ESTABLISHED

    def test_client_messages_in_order(self):
        client, server = established_pair()
        for expected_nr in (3, 4, 5):
            outgoing = next_message(client)
            assert outgoing.nr == expected_nr
            assert on_message(server, outgoing)

    def test_server_messages_counted_separately(self):
        client, server = established_pair()
        for expected_nr in (2, 3):
            reply = next_message(server)
            assert reply.nr == expected_nr
            assert on_message(client, reply)

    def test_second_begin_is_invalid(self):
        client = SessionState.client()
        client_begin(client)
        with pytest.raises(InvalidPhase):
            client_begin(client)

    def test_server_cannot_begin(self):
        with pytest.raises(InvalidPhase):
            client_begin(SessionState.server())

    def test_opening_must_have_empty_session(self):
        with pytest.raises(MalformedContinue):
            server_accept(SessionState.server(), ContinueElement(nonce=bytes(16), session="x", nr=1), NOW)
        with pytest.raises(MalformedContinue):
            server_accept(SessionState.server(), ContinueElement(nonce=None, session="", nr=1), NOW)

    def test_echoed_nonce_must_match(self):
        client = SessionState.client()
        client_begin(client)
        with pytest.raises(NonceMismatch):
            client_confirm(client, ContinueElement(nonce=b"\x01" * 16, session="1-" + "0" * 32, nr=1))

    def test_server_answer_without_session(self):
        client = SessionState.client()
        opening = client_begin(client)
        with pytest.raises(MalformedContinue):
            client_confirm(client, ContinueElement(nonce=opening.nonce, session="", nr=1))

    def test_short_entropy(self):
        with pytest.raises(ValueError):
            client_begin(SessionState.client(), rng=lambda n: b"\x00")


class TestOnMessage:
    def test_replay(self):
        client, server = established_pair()
        message = next_message(client)
        assert on_message(server, message)
        verdict = on_message(server, message)
        assert verdict.reason is SessionRejectReason.NR_REPLAY
        assert server.nr_peer_last == message.nr

    def test_gap(self):
        client, server = established_pair()
        next_message(client)
        skipped = next_message(client)
        verdict = on_message(server, skipped)
        assert verdict.reason is SessionRejectReason.NR_GAP
        assert server.nr_peer_last == 2

    def test_wrong_session(self):
        _, server = established_pair()
        verdict = on_message(server, ContinueElement(nonce=None, session="0-" + "f" * 32, nr=3))
        assert verdict.reason is SessionRejectReason.WRONG_SESSION

    def test_nonce_after_handshake(self):
        client, server = established_pair()
        with pytest.raises(MalformedContinue):
            on_message(server, ContinueElement(nonce=bytes(16), session=client.session_id, nr=3))

    def test_rejection_does_not_move_the_counter(self):
        client, server = established_pair()
        good = next_message(client)
        on_message(server, ContinueElement(nonce=None, session=client.session_id, nr=good.nr + 5))
        assert on_message(server, good)

    @pytest.mark.parametrize("deviation", list(itertools.permutations([0, 2, 5], 3)))
    def test_out_of_order_deliveries(self, deviation):
        client, server = established_pair()
        messages = [next_message(client) for _ in range(6)]
        accepted = []
        for index in list(deviation) + [1, 3, 4]:
            if on_message(server, messages[index]):
                accepted.append(messages[index].nr)
        assert accepted == sorted(accepted)
        assert len(accepted) == len(set(accepted))

    def test_before_handshake(self):
        with pytest.raises(InvalidPhase):
            on_message(SessionState.client(), ContinueElement(nonce=None, session="s", nr=2))
        client = SessionState.client()
        client_begin(client)
        with pytest.raises(InvalidPhase):
            on_message(client, ContinueElement(nonce=None, session="s", nr=2))


IN_ORDER = (1, 2, 3)
DELIVERY_ORDERS = [seq for length in range(1, 5) for seq in itertools.product(IN_ORDER, repeat=length)]


def deliver_handshake(sequence):
    """Deliver handshake messages 1..3 in `sequence`.

    A message that does not exist yet is replaced by the recorded copy from
    an earlier session on the same server. Returns (established, rejections).
    """
    store = SessionStore()
    earlier_client = SessionState.client()
    _, earlier_answer = store.open(client_begin(earlier_client), NOW)
    earlier_confirm = client_confirm(earlier_client, earlier_answer)
    assert on_message(store.get(earlier_confirm.session, NOW), earlier_confirm)
    recorded = {2: earlier_answer, 3: earlier_confirm}

    client = SessionState.client()
    live = {1: client_begin(client)}
    server = None
    rejections = []
    for step in sequence:
        message = live.get(step, recorded.get(step))
        try:
            if step == 1:
                server, live[2] = store.open(message, NOW)
            elif step == 2:
                live[3] = client_confirm(client, message)
            else:
                target = store.get(message.session, NOW)
                assert target is not None
                verdict = on_message(target, message)
                if not verdict:
                    rejections.append(verdict.reason)
        except SessionError as e:
            rejections.append(type(e).__name__)
    established = (client.phase is Phase.ESTABLISHED and server is not None
                   and server.phase is Phase.ESTABLISHED)
    return established, rejections


class TestHandshakeDeliveryOrders:
    def test_enumeration_size(self):
        assert len(DELIVERY_ORDERS) == 3 + 9 + 27 + 81

    @pytest.mark.parametrize("sequence", DELIVERY_ORDERS)
    def test_only_in_order_establishes(self, sequence):
        established, rejections = deliver_handshake(sequence)
        assert (established and not rejections) == (sequence == IN_ORDER)
        is_prefix = sequence == IN_ORDER[:len(sequence)]
        assert bool(rejections) == (not is_prefix)


class TestEndSession:
    def test_end_then_nothing(self):
        client, server = established_pair()
        marker = end_session(client)
        assert is_session_end(marker)
        assert client.phase is Phase.ENDED
        with pytest.raises(InvalidPhase):
            on_message(client, ContinueElement(nonce=None, session=client.session_id, nr=2))
        with pytest.raises(InvalidPhase):
            next_message(client)
        with pytest.raises(InvalidPhase):
            end_session(client)

    def test_end_requires_established(self):
        client = SessionState.client()
        client_begin(client)
        with pytest.raises(InvalidPhase):
            end_session(client)


class TestSessionIds:
    def test_format_and_uniqueness(self):
        ids = {new_session_id(NOW) for _ in range(1000)}
        assert len(ids) == 1000
        assert all(SESSION_ID_RE.match(session_id) for session_id in ids)
        assert next(iter(ids)).startswith(str(int(NOW.timestamp() * 1000)))


class TestContinueElement:
    @pytest.mark.parametrize("cont", [
        ContinueElement(nonce=bytes(range(16)), session="", nr=1),
        ContinueElement(nonce=None, session="123-" + "a" * 32, nr=42),
    ])
    def test_xml_roundtrip(self, cont):
        assert ContinueElement.from_xml(parse(serialize_element(cont.to_xml())).root) == cont

    @pytest.mark.parametrize("nr", [0, -1, True, "2"])
    def test_invalid_nr(self, nr):
        with pytest.raises(ValueError):
            ContinueElement(nonce=None, session="s", nr=nr)

    @pytest.mark.parametrize("source", [
        b'<ses:Continue xmlns:ses="urn:httpi-soap:session"><ses:Nr>1</ses:Nr><ses:Session/></ses:Continue>',
        b'<ses:Continue xmlns:ses="urn:httpi-soap:session"><ses:Session/><ses:Nr>01</ses:Nr></ses:Continue>',
        b'<ses:Continue xmlns:ses="urn:httpi-soap:session"><ses:Session/><ses:Nr>x</ses:Nr></ses:Continue>',
        b'<ses:Continue xmlns:ses="urn:httpi-soap:session"><ses:Nonce>!!</ses:Nonce>'
        b'<ses:Session/><ses:Nr>1</ses:Nr></ses:Continue>',
        b'<ses:Continue xmlns:ses="urn:httpi-soap:session" a="1"><ses:Session/><ses:Nr>1</ses:Nr></ses:Continue>',
        b'<ses:Other xmlns:ses="urn:httpi-soap:session"/>',
    ])
    def test_strict_parsing(self, source):
        with pytest.raises(MalformedContinue):
            ContinueElement.from_xml(parse(source).root)

    def test_split_session_elements(self):
        cont = ContinueElement(nonce=None, session="s", nr=3)
        assert split_session_elements([cont.to_xml()]) == (cont, False)
        assert split_session_elements([cont.to_xml(), session_end_element()]) == (cont, True)
        assert split_session_elements([]) == (None, False)
        with pytest.raises(MalformedContinue):
            split_session_elements([cont.to_xml(), cont.to_xml()])
        with pytest.raises(MalformedContinue):
            split_session_elements([session_end_element(), session_end_element()])


class TestSessionStore:
    def test_open_and_get(self):
        store = SessionStore()
        opening = client_begin(SessionState.client())
        state, reply = store.open(opening, NOW, peer="client")
        assert reply.session == state.session_id
        assert store.get(state.session_id, NOW + timedelta(minutes=1)) is state
        assert state.peer == "client"
        assert len(store) == 1

    def test_idle_expiry(self):
        store = SessionStore(idle_timeout=timedelta(minutes=30))
        state, _ = store.open(client_begin(SessionState.client()), NOW)
        assert store.get(state.session_id, NOW + timedelta(minutes=29)) is state
        assert store.get(state.session_id, NOW + timedelta(minutes=60)) is None
        assert len(store) == 0

    def test_reused_opening_nonce(self):
        store = SessionStore()
        opening = client_begin(SessionState.client())
        store.open(opening, NOW)
        with pytest.raises(NonceMismatch):
            store.open(opening, NOW + timedelta(seconds=1))

    def test_remove_and_purge(self):
        store = SessionStore(idle_timeout=timedelta(minutes=1))
        first, _ = store.open(client_begin(SessionState.client()), NOW)
        store.open(client_begin(SessionState.client()), NOW)
        store.remove(first.session_id)
        assert len(store) == 1
        assert store.purge(NOW + timedelta(minutes=5)) == 1
        assert len(store) == 0
