#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Redis Replay Cache Module - Shares seen UsernameToken nonces between server
processes (e.g. several gunicorn workers) so a nonce accepted by one worker
is a replay for all of them.

Falls back to the in-process NonceCache when Redis is not installed or not
reachable.
"""

import hashlib
import logging
from datetime import datetime, timedelta
from typing import Optional, Union

from src.security.wss_tokens import DEFAULT_NONCE_WINDOW, NonceCache

# Configure logging
logger = logging.getLogger(__name__)

try:
    import redis
    from redis.exceptions import RedisError
    REDIS_AVAILABLE = True
except ImportError:
    logger.warning("Redis package not installed. Using in-process nonce cache.")
    REDIS_AVAILABLE = False
    RedisError = Exception


class RedisNonceCache:
    """NonceCache backed by Redis.

    check_and_insert is a single `SET key 1 NX EX window` round trip, which
    is atomic across every process sharing the Redis database. Redis expiry
    replaces purge.
    """

    def __init__(self, client, window: timedelta = DEFAULT_NONCE_WINDOW, prefix: str = "soapsec:nonce"):
        self.redis = client
        self.window = window
        self.prefix = prefix
        self._fallback = NonceCache(window)

    def _key(self, nonce: bytes) -> str:
        return f"{self.prefix}:{hashlib.sha256(nonce).hexdigest()}"

    def check_and_insert(self, nonce: bytes, now: datetime) -> bool:
        try:
            return bool(self.redis.set(self._key(nonce), "1", nx=True,
                                       ex=max(1, int(self.window.total_seconds()))))
        except RedisError as e:
            logger.error(f"Redis nonce check failed: {str(e)}. Using in-process cache.")
            return self._fallback.check_and_insert(nonce, now)

    def contains(self, nonce: bytes, now: datetime) -> bool:
        try:
            return bool(self.redis.exists(self._key(nonce)))
        except RedisError as e:
            logger.error(f"Redis nonce lookup failed: {str(e)}")
            return self._fallback.contains(nonce, now)

    def purge(self, now: datetime) -> int:
        return self._fallback.purge(now)


def create_nonce_cache(redis_url: Optional[str] = None,
                       window: timedelta = DEFAULT_NONCE_WINDOW) -> Union[NonceCache, RedisNonceCache]:
    """
    Build the replay cache for a server.

    Args:
        redis_url: Redis connection URL; None or empty selects the in-process cache
        window: How long a nonce is remembered

    Returns:
        RedisNonceCache when Redis answers a ping, NonceCache otherwise
    """
    if not redis_url:
        return NonceCache(window)
    if not REDIS_AVAILABLE:
        logger.warning("redis_url is set but the redis package is missing. Using in-process nonce cache.")
        return NonceCache(window)

    try:
        client = redis.Redis.from_url(redis_url, socket_timeout=5.0, socket_connect_timeout=5.0)
        client.ping()
        logger.info(f"Connected to Redis nonce cache at {redis_url}")
        return RedisNonceCache(client, window)
    except RedisError as e:
        logger.warning(f"Redis connection failed: {str(e)}. Using in-process nonce cache.")
        return NonceCache(window)
