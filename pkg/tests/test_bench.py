#!/usr/bin/env python
# -*- coding: utf-8 -*-

import pandas as pd
import pytest

from src.api_server import echo_request
from src.bench.load_runner import (
    DEFAULT_REQUEST_COUNTS,
    BenchReport,
    BenchRow,
    LoadPlan,
    check_target,
    median_row,
    request_schedule,
    run_load,
)
from src.bench.report import BENCH_CSV, CSV_COLUMNS, format_table, merge_csv, report_frame, write_report
from src.security.errors import TargetUnavailable
from src.security.soap_security import (
    ALL_POLICIES,
    HTTPI_SIGN,
    NO_SECURITY,
    USERNAME_PASSWORD,
    Credentials,
)


@pytest.fixture
def plan_for(live_server, client_credentials, client_trust, server_keys):
    """Load plan against a fresh live server for the policy."""
    def factory(policy, request_counts=(4, 7), virtual_users=3, **kwargs):
        handle = live_server(policy)
        kwargs.setdefault("credentials", client_credentials)
        return LoadPlan(target_url=handle.url, scenario=policy, payload=echo_request("hello"),
                        trust=client_trust, peer_cert=server_keys.certificate,
                        virtual_users=virtual_users, request_counts=request_counts, **kwargs)
    return factory


def row(scenario, requests, avg_ms=1.0):
    return BenchRow(scenario=scenario, requests=requests, completed=requests, errors=0,
                    wall_seconds=1.0, avg_ms=avg_ms, avg_bytes=100.0)


class TestSchedule:
    def test_default(self):
        assert request_schedule(500) == DEFAULT_REQUEST_COUNTS

    def test_cut_and_capped(self):
        assert request_schedule(100) == (10, 20, 40, 60, 100)
        assert request_schedule(60) == (10, 20, 40, 60)
        assert request_schedule(5) == (5,)
        assert request_schedule(1000)[-2:] == (500, 1000)

    def test_invalid(self):
        with pytest.raises(ValueError):
            request_schedule(0)

    @pytest.mark.parametrize("kwargs", [
        {"virtual_users": 0},
        {"request_counts": ()},
        {"request_counts": (10, 10)},
        {"request_counts": (20, 10)},
        {"request_counts": (0, 10)},
        {"repeat": 0},
    ])
    def test_plan_validation(self, kwargs):
        with pytest.raises(ValueError):
            LoadPlan(target_url="http://127.0.0.1:1/service", scenario=NO_SECURITY,
                     payload=echo_request("x"), **kwargs)

    def test_tps(self):
        assert row("NoSecurity", 10).tps == 10.0
        zero = BenchRow("NoSecurity", 10, 0, 10, 0.0, 0.0, 0.0)
        assert zero.tps == 0.0

    def test_median_row(self):
        runs = [
            BenchRow("HttpiSign", 10, 10, 0, 2.0, 30.0, 800.0),
            BenchRow("HttpiSign", 10, 9, 1, 1.0, 10.0, 800.0),
            BenchRow("HttpiSign", 10, 10, 0, 4.0, 20.0, 810.0),
        ]
        combined = median_row(runs)
        assert combined.avg_ms == 20.0
        assert combined.avg_bytes == 800.0
        assert combined.wall_seconds == 2.0
        assert (combined.completed, combined.errors) == (10, 0)
        assert combined.tps == 5.0
        assert median_row(runs[:1]) is runs[0]
        with pytest.raises(ValueError):
            median_row([])


class TestRunLoad:
    def test_measurements(self, plan_for):
        report = run_load(plan_for(NO_SECURITY))
        assert [r.requests for r in report.rows] == [4, 7]
        assert len(report.records) == 11
        for bench_row in report.rows:
            assert bench_row.completed == bench_row.requests
            assert bench_row.errors == 0
            assert bench_row.tps * bench_row.wall_seconds == pytest.approx(bench_row.completed)
            assert bench_row.avg_ms > 0
            assert bench_row.avg_bytes > 0

    def test_requests_spread_round_robin(self, plan_for):
        report = run_load(plan_for(NO_SECURITY, request_counts=(7,)))
        workers = [r.worker for r in report.records]
        assert [r.index for r in report.records] == list(range(7))
        assert workers == [i % 3 for i in range(7)]

    def test_repeated_batches(self, plan_for):
        report = run_load(plan_for(NO_SECURITY, request_counts=(4,), repeat=3))
        assert len(report.rows) == 1
        assert report.rows[0].completed == 4
        assert len(report.records) == 12
        assert sorted({r.run for r in report.records}) == [0, 1, 2]

    def test_session_mode(self, plan_for):
        report = run_load(plan_for(HTTPI_SIGN, request_counts=(3,), use_session=True))
        assert report.rows[0].completed == 3

    def test_failures_are_counted(self, plan_for):
        wrong = Credentials(username="alice", password="not-the-password")
        report = run_load(plan_for(USERNAME_PASSWORD, request_counts=(5,), credentials=wrong))
        bench_row = report.rows[0]
        assert bench_row.completed == 0
        assert bench_row.errors == 5
        assert bench_row.tps == 0.0
        assert {r.error for r in report.records} == {"SoapFault"}

    def test_unreachable_target(self):
        with pytest.raises(TargetUnavailable):
            check_target("http://127.0.0.1:1/service", timeout=2)

    def test_reply_size_ordering(self, plan_for):
        sizes = [run_load(plan_for(policy, request_counts=(5,))).rows[0].avg_bytes for policy in ALL_POLICIES]
        assert sizes == sorted(sizes)
        assert len(set(sizes)) == 4

    @pytest.mark.slow
    @pytest.mark.parametrize("requests", [10, 60, 240, 500])
    def test_cost_ordering(self, plan_for, requests):
        rows = [run_load(plan_for(policy, request_counts=(requests,), virtual_users=5, repeat=3)).rows[0]
                for policy in ALL_POLICIES]
        sizes = [r.avg_bytes for r in rows]
        response_times = [r.avg_ms for r in rows]
        throughputs = [r.tps for r in rows]
        assert sizes[0] < sizes[1] < sizes[2] < sizes[3]
        assert response_times[0] < response_times[1] < response_times[2] < response_times[3]
        assert throughputs[0] > throughputs[1] > throughputs[2] > throughputs[3]


class TestReport:
    def test_written_files(self, plan_for, tmp_path):
        report = run_load(plan_for(NO_SECURITY))
        paths = write_report(report, tmp_path)
        names = sorted(p.name for p in paths)
        assert names == sorted([BENCH_CSV, "requests_NoSecurity.csv",
                                "throughput.svg", "response_time.svg", "reply_size.svg"])
        for svg in tmp_path.glob("*.svg"):
            assert svg.read_text().lstrip().startswith("<?xml")

        bench = pd.read_csv(tmp_path / BENCH_CSV)
        assert list(bench.columns) == CSV_COLUMNS
        requests_log = pd.read_csv(tmp_path / "requests_NoSecurity.csv")
        for _, bench_row in bench.iterrows():
            batch = requests_log[(requests_log["requests"] == bench_row["requests"]) & requests_log["ok"]]
            assert len(batch) == bench_row["requests"]
            assert batch["elapsed_ms"].mean() == pytest.approx(bench_row["avg_ms"])
            assert batch["response_bytes"].mean() == pytest.approx(bench_row["avg_bytes"])

    def test_no_plots(self, plan_for, tmp_path):
        write_report(run_load(plan_for(NO_SECURITY, request_counts=(2,))), tmp_path, plots=False)
        assert not list(tmp_path.glob("*.svg"))

    def test_merge_keeps_other_scenarios(self, tmp_path):
        merge_csv(BenchReport("HttpiSign", 5, rows=[row("HttpiSign", 10), row("HttpiSign", 20)]), tmp_path)
        merge_csv(BenchReport("NoSecurity", 5, rows=[row("NoSecurity", 10)]), tmp_path)
        merge_csv(BenchReport("HttpiSign", 5, rows=[row("HttpiSign", 10, avg_ms=9.0)]), tmp_path)
        bench = pd.read_csv(tmp_path / BENCH_CSV)
        assert list(zip(bench["scenario"], bench["requests"])) == [("NoSecurity", 10), ("HttpiSign", 10)]
        assert bench.loc[bench["scenario"] == "HttpiSign", "avg_ms"].tolist() == [9.0]

    def test_table(self):
        text = format_table(report_frame(BenchReport("NoSecurity", 5, rows=[row("NoSecurity", 10)])))
        assert "avg_ms" in text
        assert "1.000" in text
