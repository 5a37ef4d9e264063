#!/usr/bin/env python
# -*- coding: utf-8 -*-

import os
from datetime import datetime, timezone

import pytest

from src.api_server import SoapService, serve
from src.keygen import keygen
from src.security.crypto_sig import TrustStore, load_keypair_files
from src.security.session_protocol import SessionStore
from src.security.soap_security import Credentials
from src.security.wss_tokens import NonceCache, UserStore
from src.utils.config import SecurityMaterials, ServiceConfig

USERNAME = "alice"
PASSWORD = "wonderland"


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="run long-running scale and timing checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def key_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("keys")
    keygen(directory, ["server", "client", "mallory"])
    return directory


def _load(key_dir, subject):
    return load_keypair_files(key_dir / f"{subject}.key.pem", key_dir / f"{subject}.cert.pem")


@pytest.fixture(scope="session")
def server_keys(key_dir):
    return _load(key_dir, "server")


@pytest.fixture(scope="session")
def client_keys(key_dir):
    return _load(key_dir, "client")


@pytest.fixture(scope="session")
def mallory_keys(key_dir):
    """Valid key pair that nobody trusts."""
    return _load(key_dir, "mallory")


@pytest.fixture
def server_trust(client_keys):
    return TrustStore([client_keys.certificate])


@pytest.fixture
def client_trust(server_keys):
    return TrustStore([server_keys.certificate])


@pytest.fixture
def users():
    return UserStore({USERNAME: PASSWORD})


@pytest.fixture
def nonce_cache():
    return NonceCache()


@pytest.fixture
def now():
    return datetime.now(timezone.utc).replace(microsecond=0)


@pytest.fixture
def client_credentials(client_keys):
    return Credentials(keypair=client_keys, username=USERNAME, password=PASSWORD)


@pytest.fixture
def make_service(server_keys, server_trust, users):
    """SoapService for a policy with in-memory materials and caches."""
    def factory(policy, clock=None, **overrides):
        config = ServiceConfig(listen_address="127.0.0.1:0", policy=policy, **overrides)
        materials = SecurityMaterials(keypair=server_keys, trust=server_trust, users=users)
        return SoapService(config, materials=materials, nonce_cache=NonceCache(config.nonce_window),
                           session_store=SessionStore(config.session_idle), clock=clock)
    return factory


@pytest.fixture
def live_server(make_service):
    """Start loopback servers on ephemeral ports; all are stopped afterwards."""
    handles = []

    def start(policy, **overrides):
        service = make_service(policy, **overrides)
        handle = serve(service.config, service=service)
        handles.append(handle)
        return handle

    yield start
    for handle in handles:
        handle.shutdown()


@pytest.fixture
def data_dir():
    return os.path.join(os.path.dirname(__file__), "data")
