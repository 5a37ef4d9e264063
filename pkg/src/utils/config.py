#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Service Configuration Module

Reads the flat `key=value` service configuration file (python-dotenv
syntax, `#` comments) into a ServiceConfig. Environment variables named
`SOAPSEC_<KEY>` override file values. Relative paths are resolved against
the directory of the configuration file.
"""

import logging
import os
from dataclasses import dataclass, field, fields
from datetime import timedelta
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

from dotenv import dotenv_values

from src.security import crypto_sig
from src.security.errors import CryptoError, ConfigError
from src.security.soap_security import NO_SECURITY, ScenarioPolicy
from src.security.wss_tokens import DigestOrder, UserStore

# Configure logging
logger = logging.getLogger(__name__)

ENV_PREFIX = "SOAPSEC_"
PATH_KEYS = ("private_key_path", "certificate_path", "truststore_path", "userstore_path")
INT_KEYS = ("clock_skew_s", "nonce_window_s", "timestamp_ttl_s", "session_idle_s")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_listen_address(value: str) -> Tuple[str, int]:
    host, sep, port_text = value.rpartition(":")
    if not sep or not host or not port_text.isdigit() or int(port_text) > 65535:
        raise ConfigError(f"listen_address must be host:port, got {value!r}")
    return host.strip("[]"), int(port_text)


@dataclass(frozen=True)
class ServiceConfig:
    listen_address: str = "127.0.0.1:8080"
    policy: ScenarioPolicy = NO_SECURITY
    private_key_path: Optional[Path] = None
    certificate_path: Optional[Path] = None
    truststore_path: Optional[Path] = None
    userstore_path: Optional[Path] = None
    clock_skew_s: int = 300
    digest_order: DigestOrder = DigestOrder.PASSWORD_FIRST
    nonce_window_s: int = 600
    timestamp_ttl_s: int = 300
    session_idle_s: int = 1800
    enable_sessions: bool = True
    redis_url: Optional[str] = field(default=None, repr=False)

    @property
    def host(self) -> str:
        return parse_listen_address(self.listen_address)[0]

    @property
    def port(self) -> int:
        return parse_listen_address(self.listen_address)[1]

    @property
    def clock_skew(self) -> timedelta:
        return timedelta(seconds=self.clock_skew_s)

    @property
    def nonce_window(self) -> timedelta:
        return timedelta(seconds=self.nonce_window_s)

    @property
    def timestamp_ttl(self) -> timedelta:
        return timedelta(seconds=self.timestamp_ttl_s)

    @property
    def session_idle(self) -> timedelta:
        return timedelta(seconds=self.session_idle_s)

    def validate(self) -> "ServiceConfig":
        """Check the values and that every path the policy needs exists."""
        parse_listen_address(self.listen_address)
        for key in INT_KEYS:
            if getattr(self, key) <= 0:
                raise ConfigError(f"{key} must be positive")
        if self.nonce_window_s < 2 * self.clock_skew_s:
            logger.warning("nonce_window_s is shorter than twice clock_skew_s; "
                           "replayed nonces may outlive the cache")

        required = []
        if self.policy.uses_keys:
            required += ["private_key_path", "certificate_path", "truststore_path"]
        if self.policy.require_username_token:
            required.append("userstore_path")
        for key in required:
            path = getattr(self, key)
            if path is None:
                raise ConfigError(f"{self.policy.name} requires {key}")
            if not Path(path).exists():
                raise ConfigError(f"{key} does not exist: {path}")
        return self

    @classmethod
    def from_mapping(cls, values: Mapping[str, Optional[str]], base_dir: Optional[Path] = None) -> "ServiceConfig":
        known = {f.name for f in fields(cls)} - {"policy"} | {"scenario"}
        unknown = sorted(k for k in values if k not in known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")

        kwargs: Dict[str, object] = {}
        for key, raw in values.items():
            if raw is None or raw.strip() == "":
                continue
            value = raw.strip()
            try:
                if key == "scenario":
                    kwargs["policy"] = ScenarioPolicy.from_name(value)
                elif key in PATH_KEYS:
                    path = Path(value).expanduser()
                    kwargs[key] = path if path.is_absolute() or base_dir is None else base_dir / path
                elif key in INT_KEYS:
                    kwargs[key] = int(value)
                elif key == "digest_order":
                    kwargs[key] = DigestOrder(value.lower())
                elif key == "enable_sessions":
                    if value.lower() not in _TRUE | _FALSE:
                        raise ValueError(f"expected a boolean, got {value!r}")
                    kwargs[key] = value.lower() in _TRUE
                else:
                    kwargs[key] = value
            except ValueError as e:
                raise ConfigError(f"invalid value for {key}: {e}") from e
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: Union[str, Path], environ: Optional[Mapping[str, str]] = None) -> "ServiceConfig":
        """
        Load and validate a configuration file.

        Args:
            path: Flat key=value configuration file
            environ: Environment used for SOAPSEC_ overrides (defaults to os.environ)

        Returns:
            A validated ServiceConfig

        Raises:
            ConfigError: missing file, unknown key, bad value or missing path
        """
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"configuration file not found: {config_path}")
        values = dict(dotenv_values(config_path))
        values.update(env_overrides(os.environ if environ is None else environ))
        config = cls.from_mapping(values, base_dir=config_path.parent).validate()
        logger.info(f"Loaded {config.policy.name} configuration from {config_path}")
        return config


def env_overrides(environ: Mapping[str, str]) -> Dict[str, str]:
    keys = {f.name for f in fields(ServiceConfig)} - {"policy"} | {"scenario"}
    overrides = {}
    for key in keys:
        env_key = ENV_PREFIX + key.upper()
        if env_key in environ:
            overrides[key] = environ[env_key]
    return overrides


@dataclass
class SecurityMaterials:
    """Keys, trusted certificates and users loaded for a configuration."""
    keypair: Optional[crypto_sig.KeyPair] = None
    trust: crypto_sig.TrustStore = field(default_factory=crypto_sig.TrustStore)
    users: UserStore = field(default_factory=UserStore)

    @classmethod
    def load(cls, config: ServiceConfig) -> "SecurityMaterials":
        materials = cls()
        try:
            if config.private_key_path and config.certificate_path:
                materials.keypair = crypto_sig.load_keypair_files(config.private_key_path,
                                                                  config.certificate_path)
            if config.truststore_path:
                materials.trust = crypto_sig.TrustStore.from_directory(config.truststore_path)
            if config.userstore_path:
                materials.users = UserStore.from_file(config.userstore_path)
        except (CryptoError, OSError) as e:
            raise ConfigError(f"cannot load security materials: {e}") from e
        return materials
