#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Load Runner

Drives a running service with a fixed number of virtual users for each
request count of a schedule and measures:
- average response time (send start to full response, per request)
- throughput (completed requests / wall-clock seconds for the batch)
- average reply size (HTTP response body bytes)

Each batch can be repeated; the reported row is the median of the repeats.
Failed requests are counted, not fatal.
"""

import concurrent.futures
import logging
import statistics
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import requests
from cryptography import x509

from src.security.crypto_sig import TrustStore
from src.security.errors import Error, TargetUnavailable
from src.security.soap_security import Credentials, ScenarioPolicy
from src.security.xml_model import XmlElement
from src.service_client import ServiceClient

# Configure logging
logger = logging.getLogger(__name__)

DEFAULT_VIRTUAL_USERS = 5
DEFAULT_REQUEST_COUNTS = (10, 20, 40, 60, 120, 180, 240, 300, 360, 420, 480, 500)


def request_schedule(max_requests: int, base: Sequence[int] = DEFAULT_REQUEST_COUNTS) -> Tuple[int, ...]:
    """The default schedule cut at max_requests; max_requests itself is always the last step."""
    if max_requests < 1:
        raise ValueError("max_requests must be positive")
    counts = [n for n in base if n < max_requests]
    counts.append(max_requests)
    return tuple(counts)


@dataclass(frozen=True)
class LoadPlan:
    target_url: str
    scenario: ScenarioPolicy
    payload: XmlElement
    credentials: Credentials = field(default_factory=Credentials)
    trust: Optional[TrustStore] = None
    peer_cert: Optional[x509.Certificate] = None
    virtual_users: int = DEFAULT_VIRTUAL_USERS
    request_counts: Tuple[int, ...] = DEFAULT_REQUEST_COUNTS
    use_session: bool = False
    timeout: float = 30.0
    repeat: int = 1

    def __post_init__(self):
        object.__setattr__(self, "request_counts", tuple(self.request_counts))
        if self.virtual_users < 1:
            raise ValueError("virtual_users must be positive")
        if self.repeat < 1:
            raise ValueError("repeat must be positive")
        if not self.request_counts or any(n < 1 for n in self.request_counts):
            raise ValueError("request_counts must be positive")
        if any(b <= a for a, b in zip(self.request_counts, self.request_counts[1:])):
            raise ValueError("request_counts must be strictly increasing")


@dataclass(frozen=True)
class RequestRecord:
    scenario: str
    requests: int
    index: int
    worker: int
    elapsed_ms: float
    response_bytes: int
    ok: bool
    error: str = ""
    run: int = 0


@dataclass(frozen=True)
class BenchRow:
    scenario: str
    requests: int
    completed: int
    errors: int
    wall_seconds: float
    avg_ms: float
    avg_bytes: float

    @property
    def tps(self) -> float:
        return self.completed / self.wall_seconds if self.wall_seconds > 0 else 0.0


@dataclass
class BenchReport:
    scenario: str
    virtual_users: int
    rows: List[BenchRow] = field(default_factory=list)
    records: List[RequestRecord] = field(default_factory=list)


def check_target(url: str, timeout: float = 5.0) -> None:
    try:
        requests.options(url, timeout=timeout)
    except requests.exceptions.RequestException as e:
        raise TargetUnavailable(f"{url} is not reachable: {e}") from e


def _worker(plan: LoadPlan, worker: int, indices: Sequence[int], total: int, run: int = 0) -> List[RequestRecord]:
    records = []
    with ServiceClient(plan.target_url, plan.scenario, plan.credentials, trust=plan.trust,
                       peer_cert=plan.peer_cert, timeout=plan.timeout) as client:
        for index in indices:
            start = time.perf_counter()
            try:
                result = client.invoke(plan.payload, use_session=plan.use_session)
                records.append(RequestRecord(plan.scenario.name, total, index, worker,
                                             result.elapsed_ms, result.response_bytes, True, run=run))
            except Error as e:
                elapsed_ms = (time.perf_counter() - start) * 1000.0
                logger.debug(f"Request {index} failed: {type(e).__name__}: {e}")
                records.append(RequestRecord(plan.scenario.name, total, index, worker,
                                             elapsed_ms, 0, False, type(e).__name__, run=run))
    return records


def summarize(scenario: str, total: int, records: Sequence[RequestRecord], wall_seconds: float) -> BenchRow:
    completed = [r for r in records if r.ok]
    avg_ms = sum(r.elapsed_ms for r in completed) / len(completed) if completed else 0.0
    avg_bytes = sum(r.response_bytes for r in completed) / len(completed) if completed else 0.0
    return BenchRow(scenario=scenario, requests=total, completed=len(completed),
                    errors=len(records) - len(completed), wall_seconds=wall_seconds,
                    avg_ms=avg_ms, avg_bytes=avg_bytes)


def run_batch(plan: LoadPlan, total: int, run: int = 0) -> Tuple[BenchRow, List[RequestRecord]]:
    """Send `total` requests, assigned round-robin to the virtual users."""
    assignments = [list(range(w, total, plan.virtual_users)) for w in range(plan.virtual_users)]
    records: List[RequestRecord] = []
    start = time.perf_counter()
    with concurrent.futures.ThreadPoolExecutor(max_workers=plan.virtual_users) as executor:
        futures = [executor.submit(_worker, plan, w, indices, total, run)
                   for w, indices in enumerate(assignments) if indices]
        for future in concurrent.futures.as_completed(futures):
            records.extend(future.result())
    wall_seconds = time.perf_counter() - start
    records.sort(key=lambda r: r.index)
    return summarize(plan.scenario.name, total, records, wall_seconds), records


def median_row(rows: Sequence[BenchRow]) -> BenchRow:
    """Per-metric median of repeated batches of the same size. completed and
    wall_seconds take the low median."""
    if not rows:
        raise ValueError("no rows to combine")
    if len(rows) == 1:
        return rows[0]
    completed = statistics.median_low([r.completed for r in rows])
    return BenchRow(scenario=rows[0].scenario, requests=rows[0].requests, completed=completed,
                    errors=rows[0].requests - completed,
                    wall_seconds=statistics.median_low([r.wall_seconds for r in rows]),
                    avg_ms=statistics.median([r.avg_ms for r in rows]),
                    avg_bytes=statistics.median([r.avg_bytes for r in rows]))


def run_load(plan: LoadPlan) -> BenchReport:
    """
    Run the whole schedule of a plan.

    Raises:
        TargetUnavailable: the target does not answer at all
    """
    check_target(plan.target_url)
    report = BenchReport(scenario=plan.scenario.name, virtual_users=plan.virtual_users)
    for total in plan.request_counts:
        batches = [run_batch(plan, total, run) for run in range(plan.repeat)]
        row = median_row([batch_row for batch_row, _ in batches])
        report.rows.append(row)
        for _, records in batches:
            report.records.extend(records)
        logger.info(f"{plan.scenario.name} N={total}: {row.avg_ms:.2f} ms avg, "
                    f"{row.tps:.2f} tx/s, {row.avg_bytes:.0f} B, {row.errors} errors")
    return report
