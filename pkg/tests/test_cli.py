#!/usr/bin/env python
# -*- coding: utf-8 -*-

import pandas as pd
import pytest

from src.main import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main, parse_arguments
from src.security.soap_security import HTTPI_SIGN, NO_SECURITY, USERNAME_PASSWORD


@pytest.fixture
def payload_file(tmp_path):
    path = tmp_path / "add.xml"
    path.write_bytes(b'<svc:Add xmlns:svc="urn:httpi-soap:sample"><svc:a>20</svc:a><svc:b>22</svc:b></svc:Add>')
    return str(path)


@pytest.fixture
def client_args(key_dir):
    return ["--key", str(key_dir / "client.key.pem"), "--cert", str(key_dir / "client.cert.pem"),
            "--truststore", str(key_dir), "--peer-cert", str(key_dir / "server.cert.pem")]


class TestArguments:
    def test_scenario_parsed(self):
        args = parse_arguments(["invoke", "--url", "http://h/service", "--scenario", "httpi-sign",
                                "--payload", "p.xml"])
        assert args.scenario == HTTPI_SIGN
        assert args.session is False

    def test_bench_defaults(self):
        args = parse_arguments(["bench", "--url", "http://h/service", "--scenario", "NoSecurity", "--out", "o"])
        assert args.users == 5
        assert args.max_requests == 500
        assert args.payload is None
        assert args.repeat == 1

    @pytest.mark.parametrize("argv", [
        [],
        ["invoke", "--url", "u", "--scenario", "Kerberos", "--payload", "p"],
        ["bench", "--url", "u", "--scenario", "NoSecurity", "--out", "o", "--users", "0"],
        ["bench", "--url", "u", "--scenario", "NoSecurity", "--out", "o", "--repeat", "0"],
        ["keygen", "--out", "o"],
        ["frobnicate"],
    ])
    def test_usage_errors_exit_with_one(self, argv):
        with pytest.raises(SystemExit) as excinfo:
            parse_arguments(argv)
        assert excinfo.value.code == EXIT_USAGE

    def test_credentials_from_environment(self, monkeypatch):
        monkeypatch.setenv("SOAPSEC_USERNAME", "alice")
        monkeypatch.setenv("SOAPSEC_PASSWORD", "wonderland")
        args = parse_arguments(["invoke", "--url", "u", "--scenario", "UsernamePassword", "--payload", "p"])
        assert (args.username, args.password) == ("alice", "wonderland")


class TestKeygenCommand:
    def test_generates_files(self, tmp_path, capsys):
        assert main(["keygen", "--out", str(tmp_path), "--subjects", "server, client"]) == EXIT_OK
        assert (tmp_path / "server.key.pem").exists()
        assert (tmp_path / "client.cert.pem").exists()
        assert "server:" in capsys.readouterr().out

    def test_invalid_subject(self, tmp_path):
        assert main(["keygen", "--out", str(tmp_path), "--subjects", "a,,b"]) == EXIT_USAGE


class TestServeCommand:
    def test_missing_config(self, tmp_path):
        assert main(["serve", "--config", str(tmp_path / "absent.conf")]) == EXIT_RUNTIME

    def test_config_missing_key_material(self, tmp_path):
        config = tmp_path / "service.conf"
        config.write_text("scenario=HttpiSign\nlisten_address=127.0.0.1:0\n")
        assert main(["serve", "--config", str(config)]) == EXIT_RUNTIME


class TestInvokeCommand:
    def test_signed_call(self, live_server, payload_file, client_args, capsys):
        handle = live_server(HTTPI_SIGN)
        code = main(["invoke", "--url", handle.url, "--scenario", "HttpiSign", "--session",
                     "--payload", payload_file] + client_args)
        assert code == EXIT_OK
        assert "<svc:result>42</svc:result>" in capsys.readouterr().out

    def test_username_password(self, live_server, payload_file):
        handle = live_server(USERNAME_PASSWORD)
        code = main(["invoke", "--url", handle.url, "--scenario", "UsernamePassword",
                     "--username", "alice", "--password", "wonderland", "--payload", payload_file])
        assert code == EXIT_OK

    def test_rejected_call(self, live_server, payload_file):
        handle = live_server(USERNAME_PASSWORD)
        code = main(["invoke", "--url", handle.url, "--scenario", "UsernamePassword",
                     "--username", "alice", "--password", "wrong", "--payload", payload_file])
        assert code == EXIT_RUNTIME

    def test_missing_credentials(self, live_server, payload_file):
        handle = live_server(HTTPI_SIGN)
        code = main(["invoke", "--url", handle.url, "--scenario", "HttpiSign", "--payload", payload_file])
        assert code == EXIT_RUNTIME

    def test_key_without_cert(self, payload_file, key_dir):
        code = main(["invoke", "--url", "http://127.0.0.1:1/service", "--scenario", "HttpiSign",
                     "--key", str(key_dir / "client.key.pem"), "--payload", payload_file])
        assert code == EXIT_USAGE

    def test_bad_payload(self, tmp_path, live_server):
        handle = live_server(NO_SECURITY)
        broken = tmp_path / "broken.xml"
        broken.write_bytes(b"<svc:Add")
        code = main(["invoke", "--url", handle.url, "--scenario", "NoSecurity", "--payload", str(broken)])
        assert code == EXIT_USAGE

    def test_missing_payload_file(self, tmp_path):
        code = main(["invoke", "--url", "http://127.0.0.1:1/service", "--scenario", "NoSecurity",
                     "--payload", str(tmp_path / "absent.xml")])
        assert code == EXIT_USAGE


class TestBenchCommand:
    def test_small_run(self, live_server, client_args, tmp_path, capsys):
        handle = live_server(HTTPI_SIGN)
        out = tmp_path / "bench"
        code = main(["bench", "--url", handle.url, "--scenario", "HttpiSign", "--users", "2",
                     "--max-requests", "12", "--out", str(out), "--no-plots"] + client_args)
        assert code == EXIT_OK
        bench = pd.read_csv(out / "bench.csv")
        assert bench["requests"].tolist() == [10, 12]
        assert (bench["errors"] == 0).all()
        assert "avg_ms" in capsys.readouterr().out

    def test_repeated_run_records_every_request(self, live_server, tmp_path):
        handle = live_server(NO_SECURITY)
        out = tmp_path / "bench"
        code = main(["bench", "--url", handle.url, "--scenario", "NoSecurity", "--users", "2",
                     "--max-requests", "3", "--repeat", "3", "--out", str(out), "--no-plots"])
        assert code == EXIT_OK
        assert pd.read_csv(out / "bench.csv")["requests"].tolist() == [3]
        log = pd.read_csv(out / "requests_NoSecurity.csv")
        assert len(log) == 9
        assert sorted(log["run"].unique()) == [0, 1, 2]

    def test_unreachable_target(self, tmp_path):
        code = main(["bench", "--url", "http://127.0.0.1:1/service", "--scenario", "NoSecurity",
                     "--max-requests", "1", "--out", str(tmp_path)])
        assert code == EXIT_RUNTIME
