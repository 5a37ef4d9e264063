#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
SOAP Security Toolkit Main Application

Command-line entry point:
- serve:  run the sample web service under one security scenario
- invoke: send one operation and print the verified reply
- bench:  measure response time, throughput and reply size for a scenario
- keygen: provision key pairs and self-signed certificates

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from src.security import crypto_sig
from src.security.errors import Error, XmlError
from src.security.soap_security import Credentials, ScenarioPolicy
from src.security.xml_model import XmlElement, parse, serialize_element

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this CLI reserves 2 for runtime errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def configure_logging(verbose: bool = False, log_file: Optional[str] = None) -> None:
    level_name = 'DEBUG' if verbose else os.getenv('LOG_LEVEL', 'INFO').upper()
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), format=LOG_FORMAT,
                        handlers=handlers, force=True)


def scenario_arg(value: str) -> ScenarioPolicy:
    try:
        return ScenarioPolicy.from_name(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {value!r}")
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {number}")
    return number


def _add_client_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--url', required=True, help='Service URL, e.g. http://127.0.0.1:8080/service')
    parser.add_argument('--scenario', required=True, type=scenario_arg,
                        help='NoSecurity, UsernamePassword, HttpiSign or SignEncrypt')
    parser.add_argument('--session', action='store_true', help='Run the session handshake first (HttpiSign)')
    parser.add_argument('--key', help='Client private key (PKCS#8 PEM)')
    parser.add_argument('--cert', help='Client certificate (PEM)')
    parser.add_argument('--truststore', help='Directory of certificates trusted to sign replies')
    parser.add_argument('--peer-cert', help='Service certificate (required for SignEncrypt)')
    parser.add_argument('--username', default=os.getenv('SOAPSEC_USERNAME'), help='UsernameToken user')
    parser.add_argument('--password', default=os.getenv('SOAPSEC_PASSWORD'),
                        help='UsernameToken password (or SOAPSEC_PASSWORD)')


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    parser = CliParser(prog='soapsec', description='SOAP message security toolkit')
    parser.add_argument('--verbose', '-v', action='store_true', help='Debug logging')
    parser.add_argument('--log-file', help='Also write logs to this file')

    # Setup subparsers for different commands
    subparsers = parser.add_subparsers(dest='command', help='Command to execute')

    # Serve command
    serve_parser = subparsers.add_parser('serve', help='Run the sample web service')
    serve_parser.add_argument('--config', required=True, help='Flat key=value configuration file')

    # Invoke command
    invoke_parser = subparsers.add_parser('invoke', help='Invoke one operation')
    _add_client_options(invoke_parser)
    invoke_parser.add_argument('--payload', required=True, help='File holding the operation element')

    # Bench command
    bench_parser = subparsers.add_parser('bench', help='Load test one scenario')
    _add_client_options(bench_parser)
    bench_parser.add_argument('--payload', help='File holding the operation element (default: Echo)')
    bench_parser.add_argument('--users', type=positive_int, default=5, help='Virtual users')
    bench_parser.add_argument('--max-requests', type=positive_int, default=500,
                              help='Largest request count of the schedule')
    bench_parser.add_argument('--repeat', type=positive_int, default=1,
                              help='Runs per request count; the per-metric median is recorded')
    bench_parser.add_argument('--out', required=True, help='Output directory for CSV and SVG files')
    bench_parser.add_argument('--no-plots', action='store_true', help='Skip the SVG panels')

    # Keygen command
    keygen_parser = subparsers.add_parser('keygen', help='Generate key pairs and certificates')
    keygen_parser.add_argument('--out', required=True, help='Output directory')
    keygen_parser.add_argument('--subjects', required=True, help='Comma-separated subject names')

    args = parser.parse_args(argv)
    if not args.command:
        parser.error("no command specified; choose serve, invoke, bench or keygen")
    return args


def load_payload(path: str) -> XmlElement:
    try:
        return parse(Path(path).read_bytes()).root
    except OSError as e:
        raise UsageError(f"cannot read payload {path}: {e}")


def load_client_credentials(args) -> dict:
    """Credentials, trust store and peer certificate from the client options."""
    if bool(args.key) != bool(args.cert):
        raise UsageError("--key and --cert must be given together")
    keypair = crypto_sig.load_keypair_files(args.key, args.cert) if args.key else None
    trust = crypto_sig.TrustStore.from_directory(args.truststore) if args.truststore else None
    peer_cert = crypto_sig.load_certificate(Path(args.peer_cert).read_bytes()) if args.peer_cert else None
    credentials = Credentials(keypair=keypair, username=args.username, password=args.password)
    return {"credentials": credentials, "trust": trust, "peer_cert": peer_cert}


def handle_serve(args) -> int:
    """Handle serve command."""
    from src.api_server import serve
    from src.utils.config import ServiceConfig

    config = ServiceConfig.from_file(args.config)
    handle = serve(config)
    print(f"Serving {config.policy.name} at {handle.url}", flush=True)
    try:
        while handle.thread.is_alive():
            handle.thread.join(timeout=1.0)
    except KeyboardInterrupt:
        logger.info("Interrupted, shutting down")
    finally:
        handle.shutdown()
    return EXIT_OK


def handle_invoke(args) -> int:
    """Handle invoke command."""
    from src.service_client import invoke

    payload = load_payload(args.payload)
    result = invoke(args.url, payload, args.scenario, use_session=args.session,
                    **load_client_credentials(args))
    body = result["body"]
    print(serialize_element(body).decode("utf-8") if body is not None else "")
    logger.info(f"{args.scenario.name}: {result['response_bytes']} bytes in {result['elapsed_ms']:.2f} ms")
    return EXIT_OK


def handle_bench(args) -> int:
    """Handle bench command."""
    from src.api_server import echo_request
    from src.bench.load_runner import LoadPlan, request_schedule, run_load
    from src.bench.report import format_table, report_frame, write_report

    payload = load_payload(args.payload) if args.payload else echo_request("hello")
    plan = LoadPlan(target_url=args.url, scenario=args.scenario, payload=payload,
                    virtual_users=args.users, request_counts=request_schedule(args.max_requests),
                    use_session=args.session, repeat=args.repeat, **load_client_credentials(args))

    start_time = time.time()
    report = run_load(plan)
    print(format_table(report_frame(report)))
    paths = write_report(report, args.out, plots=not args.no_plots)
    for path in paths:
        logger.info(f"Wrote {path}")
    logger.info(f"Benchmark finished in {time.time() - start_time:.1f} s")
    return EXIT_OK


def handle_keygen(args) -> int:
    """Handle keygen command."""
    from src.keygen import keygen

    try:
        generated = keygen(args.out, args.subjects.split(','))
    except ValueError as e:
        raise UsageError(str(e))
    for item in generated:
        print(f"{item.subject}: {item.key_path} {item.cert_path}")
    return EXIT_OK


HANDLERS = {
    'serve': handle_serve,
    'invoke': handle_invoke,
    'bench': handle_bench,
    'keygen': handle_keygen,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    args = parse_arguments(argv)
    configure_logging(args.verbose, args.log_file)

    try:
        return HANDLERS[args.command](args)
    except UsageError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except XmlError as e:
        logger.error(f"Invalid payload: {e}")
        return EXIT_USAGE
    except (Error, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
