"""Command-line entry point: serve nodes, generate workloads, replay, report.

Machine-readable output (JSON, TSV) goes to stdout only; diagnostics go to
stderr. Exit codes: 0 success, 1 runtime error, 2 usage or validation error.
The BACKBONE_CDN_LOG_LEVEL environment variable (error|warn|info|debug)
controls diagnostic verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import signal
import sys

from . import accounting, workload
from .cache_engine import CacheEngine
from .core import DeploymentConfig, ParseError, ValidationError, parse_deployment
from .federation import FederationIndex
from .services import (
    CacheServer,
    FederationFetcher,
    NodeTCPServer,
    OriginServer,
    RedirectorServer,
)
from .simnet import SimConfig, SocketTransport, parse_sim_config

log = logging.getLogger("backbone_cdn")

_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _setup_logging() -> None:
    level = _LEVELS.get(os.environ.get("BACKBONE_CDN_LOG_LEVEL", "warn").lower(), logging.WARNING)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_deployment(path: str) -> DeploymentConfig:
    with open(path, encoding="utf-8") as fp:
        return parse_deployment(fp.read())


def _load_peers(path: str | None) -> dict[str, tuple[str, int]]:
    """Peer address table: one `<node_id>\\t<host>:<port>` row per line."""
    if path is None:
        return {}
    addresses: dict[str, tuple[str, int]] = {}
    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                node, addr = line.rstrip("\n").split("\t")
                host, port = addr.rsplit(":", 1)
                addresses[node] = (host, int(port))
            except ValueError:
                raise ParseError(f"peers file line {lineno}: expected <node>\\t<host>:<port>") from None
    return addresses


def _parse_listen(value: str) -> tuple[str, int]:
    try:
        host, port = value.rsplit(":", 1)
        return host, int(port)
    except ValueError:
        raise ValidationError(f"--listen {value!r}: expected <host>:<port>") from None


def cmd_serve(args: argparse.Namespace) -> int:
    deployment = _load_deployment(args.config)
    try:
        node = deployment.node(args.node_id)
    except KeyError:
        print(f"node {args.node_id!r} not in deployment", file=sys.stderr)
        return EXIT_USAGE
    if node.role != args.role:
        print(f"node {args.node_id!r} has role {node.role!r}, not {args.role!r}", file=sys.stderr)
        return EXIT_USAGE
    peers = _load_peers(args.peers)
    transport = SocketTransport(peers)

    if args.role == "origin":
        handler = OriginServer(node.id)
        for entry in deployment.catalog:
            if entry.origin == node.id:
                handler.add_file(entry.meta.id.path, entry.meta.size, entry.meta.gen_seed)
    elif args.role == "redirector":
        federation = FederationIndex.from_deployment(deployment)
        for entry in deployment.catalog:
            federation.register(entry.origin, entry.meta.id)
        handler = RedirectorServer(node.id, federation, transport)
    else:
        entry_redirector = node.parent or deployment.root_redirector
        fetcher = FederationFetcher(transport, node.id, entry_redirector)
        handler = CacheServer(node.id, CacheEngine(deployment.cache_configs[node.id], fetcher))

    host, port = _parse_listen(args.listen)
    try:
        server = NodeTCPServer((host, port), handler)
    except OSError as exc:
        print(f"bind {args.listen} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    bound_host, bound_port = server.bound_address
    print(json.dumps({"node": node.id, "listening": f"{bound_host}:{bound_port}"}), flush=True)
    log.info("%s %s serving on %s:%s", args.role, node.id, bound_host, bound_port)

    def _stop(signum, frame):
        server.shutdown()

    signal.signal(signal.SIGTERM, _stop)
    signal.signal(signal.SIGINT, _stop)
    server.serve_forever()
    server.server_close()
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    with open(args.spec, encoding="utf-8") as fp:
        spec = workload.parse_workload_spec(fp.read())
    clients = [c for c in args.clients.split(",") if c]
    trace = workload.generate(spec, clients)
    with open(args.out, "w", encoding="utf-8") as fp:
        workload.write_trace(trace, fp)
    log.info("wrote %d catalog files, %d events to %s", len(trace.catalog), len(trace.events), args.out)
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    deployment = _load_deployment(args.deployment)
    with open(args.trace, encoding="utf-8") as fp:
        trace = workload.read_trace(fp)
    if args.sim is not None:
        with open(args.sim, encoding="utf-8") as fp:
            sim = parse_sim_config(fp.read())
    else:
        sim = SimConfig()
    result = workload.replay(trace, deployment, sim)
    if args.log_out is not None:
        with open(args.log_out, "w", encoding="utf-8") as fp:
            accounting.write_log(result.records, fp)
    report_json = accounting.report_to_json(result.reports)
    if args.report_out is not None:
        with open(args.report_out, "w", encoding="utf-8") as fp:
            fp.write(report_json)
    sys.stdout.write(report_json)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    with open(args.log, encoding="utf-8") as fp:
        records = accounting.read_log(fp)
    reports = accounting.report(records, args.from_ms, args.to_ms)
    sys.stdout.write(accounting.report_to_json(reports))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="backbone-cdn",
        description="Federated fetch-through cache network: services, workloads, replay, reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run one node's service until terminated")
    p_serve.add_argument("role", choices=["origin", "redirector", "cache"])
    p_serve.add_argument("--config", required=True, help="deployment JSON document")
    p_serve.add_argument("--node-id", required=True)
    p_serve.add_argument("--listen", default="127.0.0.1:0", help="host:port (port 0 = ephemeral)")
    p_serve.add_argument("--peers", help="TSV of <node_id>\\t<host>:<port> for sub-requests")
    p_serve.set_defaults(fn=cmd_serve)

    p_gen = sub.add_parser("generate", help="expand a workload spec into a trace file")
    p_gen.add_argument("--spec", required=True, help="workload spec JSON")
    p_gen.add_argument("--clients", required=True, help="comma-separated client node ids")
    p_gen.add_argument("--out", required=True, help="trace file to write")
    p_gen.set_defaults(fn=cmd_generate)

    p_replay = sub.add_parser("replay", help="replay a trace over a deployment")
    p_replay.add_argument("--trace", required=True)
    p_replay.add_argument("--deployment", required=True)
    p_replay.add_argument("--sim", help="simulated network JSON (default: zero latency)")
    p_replay.add_argument("--log-out", help="write the access log TSV here")
    p_replay.add_argument("--report-out", help="write the report JSON here")
    p_replay.set_defaults(fn=cmd_replay)

    p_report = sub.add_parser("report", help="aggregate an existing access log")
    p_report.add_argument("--log", required=True)
    p_report.add_argument("--from-ms", type=int, default=None)
    p_report.add_argument("--to-ms", type=int, default=None)
    p_report.set_defaults(fn=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ParseError, ValidationError, workload.InvalidSpec, accounting.LogFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
