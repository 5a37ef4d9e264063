#!/usr/bin/env python
# -*- coding: utf-8 -*-

from datetime import datetime, timedelta, timezone
from unittest.mock import MagicMock, patch

import pytest

from src.security.wss_tokens import NonceCache
from src.utils import redis_cache
from src.utils.redis_cache import RedisNonceCache, create_nonce_cache

NOW = datetime(2014, 5, 5, tzinfo=timezone.utc)


@pytest.fixture
def mock_redis():
    client = MagicMock()
    client.set.side_effect = [True, None]
    return client


class TestRedisNonceCache:
    def test_set_nx_with_expiry(self, mock_redis):
        cache = RedisNonceCache(mock_redis, window=timedelta(seconds=600))
        assert cache.check_and_insert(b"nonce", NOW)
        assert not cache.check_and_insert(b"nonce", NOW)
        key = mock_redis.set.call_args.args[0]
        assert key.startswith("soapsec:nonce:")
        assert mock_redis.set.call_args.kwargs == {"nx": True, "ex": 600}

    def test_same_nonce_same_key(self, mock_redis):
        cache = RedisNonceCache(mock_redis)
        assert cache._key(b"a") == cache._key(b"a")
        assert cache._key(b"a") != cache._key(b"b")

    @pytest.mark.skipif(not redis_cache.REDIS_AVAILABLE, reason="redis package not installed")
    def test_falls_back_when_redis_fails(self):
        client = MagicMock()
        client.set.side_effect = redis_cache.RedisError("down")
        client.exists.side_effect = redis_cache.RedisError("down")
        cache = RedisNonceCache(client)
        assert cache.check_and_insert(b"n", NOW)
        assert not cache.check_and_insert(b"n", NOW)
        assert cache.contains(b"n", NOW)

    def test_contains(self):
        client = MagicMock()
        client.exists.return_value = 1
        assert RedisNonceCache(client).contains(b"n", NOW)


class TestCreateNonceCache:
    def test_without_url(self):
        cache = create_nonce_cache(None, timedelta(seconds=30))
        assert isinstance(cache, NonceCache)
        assert cache.window == timedelta(seconds=30)

    @pytest.mark.skipif(not redis_cache.REDIS_AVAILABLE, reason="redis package not installed")
    def test_with_reachable_redis(self):
        client = MagicMock()
        with patch.object(redis_cache.redis.Redis, "from_url", return_value=client):
            cache = create_nonce_cache("redis://localhost:6379/0")
        assert isinstance(cache, RedisNonceCache)
        client.ping.assert_called_once()

    @pytest.mark.skipif(not redis_cache.REDIS_AVAILABLE, reason="redis package not installed")
    def test_unreachable_redis(self):
        client = MagicMock()
        client.ping.side_effect = redis_cache.RedisError("refused")
        with patch.object(redis_cache.redis.Redis, "from_url", return_value=client):
            assert isinstance(create_nonce_cache("redis://localhost:6379/0"), NonceCache)
