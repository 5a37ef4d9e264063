#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Service Monitoring and Metrics

Prometheus metrics for the SOAP endpoint, exposed by the server at
GET /metrics.
"""

import logging
import threading
import time
from typing import Tuple

from prometheus_client import CONTENT_TYPE_LATEST, Counter, Gauge, Histogram, generate_latest

# Configure logging
logger = logging.getLogger(__name__)

# Define metrics
SOAP_REQUESTS = Counter(
    'soap_requests_total',
    'Total count of SOAP requests',
    ['scenario', 'outcome']
)

SOAP_REJECTIONS = Counter(
    'soap_rejections_total',
    'Total count of rejected SOAP envelopes',
    ['reason']
)

SOAP_REQUEST_DURATION = Histogram(
    'soap_request_duration_seconds',
    'Duration of SOAP request processing in seconds',
    buckets=[0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5],
    labelnames=['scenario']
)

ACTIVE_SESSIONS = Gauge(
    'soap_active_sessions',
    'Number of open non-encrypted sessions'
)


class ServiceMetrics:
    """
    Metrics collection for one SOAP service
    """

    def __init__(self, scenario: str):
        self.scenario = scenario
        self._lock = threading.Lock()
        self.counts = {"ok": 0, "rejected": 0, "error": 0}

    def track_request(self, outcome: str, duration: float):
        """
        Track a processed request

        Args:
            outcome: "ok", "rejected" or "error"
            duration: Processing time in seconds
        """
        with self._lock:
            self.counts[outcome] = self.counts.get(outcome, 0) + 1
        SOAP_REQUESTS.labels(scenario=self.scenario, outcome=outcome).inc()
        SOAP_REQUEST_DURATION.labels(scenario=self.scenario).observe(duration)

    def track_rejection(self, reason: str):
        SOAP_REJECTIONS.labels(reason=reason).inc()

    def set_active_sessions(self, count: int):
        ACTIVE_SESSIONS.set(count)

    def measure_request(self) -> "RequestTimer":
        return RequestTimer(self)


class RequestTimer:
    """Context manager that records one request; outcome defaults to "error"
    unless the handler sets it."""

    def __init__(self, metrics: ServiceMetrics):
        self.metrics = metrics
        self.outcome = "error"
        self.start_time = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.metrics.track_request(self.outcome, time.perf_counter() - self.start_time)
        return False


def metrics_payload() -> Tuple[bytes, str]:
    """Current metrics in the Prometheus text format, with its content type."""
    return generate_latest(), CONTENT_TYPE_LATEST
