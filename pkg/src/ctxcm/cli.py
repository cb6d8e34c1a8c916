"""``ctxcm`` command line.

Exit codes: 0 success, 1 domain error (bad input, failed validation,
unknown ids), 2 environment error (I/O, ports).
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
import time
from pathlib import Path

from .formats.ontology import OntologySyntaxError, parse_ontology, serialize_ontology
from .formats.records import RecordFormatError, dump_artifacts, dump_records, load_records
from .formats.trace import TraceError, parse_trace
from .harness import CONFIRM_POLICIES, cascade_lines, confirm_policy, replay
from .manager import ContextManager, EventLog, ManagerConfig, evolve
from .model import ModelError, Ontology, validate_ontology

EXIT_OK, EXIT_DOMAIN, EXIT_ENV = 0, 1, 2


class _Exit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise _Exit(EXIT_ENV, f"cannot read {path}: {exc.strerror or exc}") from None


def _write(path: str, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise _Exit(EXIT_ENV, f"cannot write {path}: {exc.strerror or exc}") from None


def _load_ontology(path: str, check: bool = True) -> Ontology:
    try:
        onto = parse_ontology(_read(path))
    except OntologySyntaxError as exc:
        raise _Exit(EXIT_DOMAIN, "\n".join(f"{path}: {d}" for d in exc.errors)) from None
    if check:
        problems = validate_ontology(onto)
        if problems:
            raise _Exit(EXIT_DOMAIN, "\n".join(f"{path}: {v}" for v in problems))
    return onto


def _load_trace(path: str):
    try:
        return parse_trace(_read(path))
    except TraceError as exc:
        raise _Exit(EXIT_DOMAIN, f"{path}: {exc}") from None


def _globals(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise _Exit(EXIT_DOMAIN, f"--global expects key=value, got {item!r}")
        out[key] = value
    return out


def _open_log(path: str | None):
    if path is None:
        return sys.stderr
    try:
        return open(path, "w", encoding="utf-8")
    except OSError as exc:
        raise _Exit(EXIT_ENV, f"cannot open log {path}: {exc.strerror or exc}") from None


def cmd_validate(args) -> int:
    try:
        onto = parse_ontology(_read(args.ontology))
    except OntologySyntaxError as exc:
        for d in exc.errors:
            print(f"{args.ontology}: {d}")
        return EXIT_DOMAIN
    problems = validate_ontology(onto)
    for v in problems:
        print(f"{args.ontology}: {v}")
    if problems:
        return EXIT_DOMAIN
    print(
        f"{args.ontology}: ok ({len(onto.activity_classes)} activity classes, "
        f"{len(onto.generic_contexts)} generic contexts, {len(onto.resources)} resources, "
        f"{len(onto.agents)} agents)"
    )
    return EXIT_OK


def _config(args) -> ManagerConfig:
    return ManagerConfig(global_context=_globals(getattr(args, "globals", None)))


def cmd_replay(args) -> int:
    onto = _load_ontology(args.ontology)
    events = _load_trace(args.trace)
    sink = _open_log(args.log)
    try:
        cm, report = replay(onto, events, args.confirm_policy, _config(args), sink, end_all=args.end_all)
    finally:
        if sink is not sys.stderr:
            sink.close()
    text = json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    if args.report:
        _write(args.report, text)
        print(
            f"identifications={len(report.identifications)} focus_switches={report.focus_switches} "
            f"drift={report.drift_events} publishes={report.publishes} suggestions={report.suggestions} "
            f"confirmations={report.confirmations_requested}/{report.confirmations_answered}"
        )
    else:
        sys.stdout.write(text)
    if args.records:
        _write(args.records, dump_records(cm.records.values()))
    if args.artifacts:
        _write(args.artifacts, dump_artifacts(cm.artifacts.values()))
    return EXIT_OK


def cmd_query(args) -> int:
    onto = _load_ontology(args.ontology)
    events = _load_trace(args.trace)
    cm, _ = replay(onto, events, args.confirm_policy, _config(args), None)
    selector = args.selector
    if not selector:
        raise _Exit(EXIT_DOMAIN, "empty selector; use focus|resolve|cascade")
    kind, rest = selector[0], selector[1:]
    expected = {"focus": 1, "cascade": 1, "resolve": 2}
    if kind not in expected or len(rest) != expected[kind]:
        raise _Exit(EXIT_DOMAIN, "selector must be: focus <agent> | resolve <agent> <key> | cascade <agent>")
    agent = rest[0]
    if agent not in onto.agents:
        raise _Exit(EXIT_DOMAIN, f"unknown agent {agent!r}")
    focus = cm.lifecycle.current_focus(agent)
    if kind == "focus":
        if focus is None:
            print("none")
        else:
            print(f"{focus} {cm.cascade.contexts[focus].generic_origin}")
    elif kind == "cascade":
        lines = cascade_lines(cm, agent)
        print("\n".join(lines) if lines else "(empty)")
    else:
        if focus is None:
            raise _Exit(EXIT_DOMAIN, f"agent {agent!r} has no focus to resolve from")
        res = cm.cascade.resolve(focus, rest[1])
        if res is None:
            print(f"{rest[1]}: not found")
        else:
            value = res.value if res.kind == "attribute" else f"resource {res.value.id} ({res.value.name})"
            origin = cm.cascade.contexts[res.provider].generic_origin
            print(f'{rest[1]} = {value} (provider {res.provider} "{origin}", depth {res.depth})')
    return EXIT_OK


def cmd_evolve(args) -> int:
    onto = _load_ontology(args.ontology)
    try:
        records = load_records(_read(args.records).decode("utf-8"))
    except (RecordFormatError, UnicodeDecodeError) as exc:
        raise _Exit(EXIT_DOMAIN, f"{args.records}: {exc}") from None
    if not 0.0 <= args.p <= 1.0 or args.n < 0:
        raise _Exit(EXIT_DOMAIN, "--p must lie in [0, 1] and --n must be non-negative")
    report, updated = evolve(onto, records, args.generic, args.p, args.n)
    for line in report.lines():
        print(line)
    out = args.out or str(Path(args.ontology).with_suffix(".evolved.ctx"))
    _write(out, serialize_ontology(updated))
    print(f"wrote {out} (version {updated.version})")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import DEFAULT_CONFIRM_TIMEOUT, ContextService

    onto = _load_ontology(args.ontology)
    config = _config(args)
    policy = None
    if args.confirm_policy:
        policy = confirm_policy(args.confirm_policy)
    else:
        config.confirm_timeout_steps = None
    sink = _open_log(args.log)
    cm = ContextManager(onto, config, EventLog(sink, clock=time.time), policy)
    service = ContextService(cm, args.host, args.port, args.ingest_port, args.confirm_timeout or DEFAULT_CONFIRM_TIMEOUT)

    async def main() -> None:
        try:
            await service.start()
        except OSError as exc:
            raise _Exit(EXIT_ENV, f"cannot bind: {exc.strerror or exc}") from None
        service.install_signal_handlers()
        (h, p), (ih, ip) = service.addresses
        print(f"listening subscribers={h}:{p} ingest={ih}:{ip}", flush=True)
        await service.wait_stopped()

    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        pass
    finally:
        if args.records:
            _write(args.records, dump_records(cm.records.values()))
        if sink is not sys.stderr:
            sink.close()
    return EXIT_OK


def cmd_demo_subscriber(args) -> int:
    from .subscriber import run_subscriber

    agents = args.agent_filter.split(",") if args.agent_filter else None
    return run_subscriber(args.host, args.port, args.app_id, agents, args.confirm)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxcm", description="Activity-centric context manager")
    p.add_argument("-v", "--verbose", action="store_true", help="diagnostic logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse and check an ontology file")
    v.add_argument("ontology")
    v.set_defaults(func=cmd_validate)

    def replay_args(sp):
        sp.add_argument("ontology")
        sp.add_argument("trace")
        sp.add_argument("--confirm-policy", choices=CONFIRM_POLICIES, default="first")
        sp.add_argument("--global", dest="globals", action="append", metavar="KEY=VALUE", default=[])

    r = sub.add_parser("replay", help="replay a trace through the context manager")
    replay_args(r)
    r.add_argument("--report", help="write the JSON report here (default: stdout)")
    r.add_argument("--log", help="structured log file (default: stderr)")
    r.add_argument("--records", help="write behaviour records as JSON lines")
    r.add_argument("--artifacts", help="write artifact snapshots as JSON lines")
    r.add_argument("--end-all", action="store_true", help="end every live activity after the trace")
    r.set_defaults(func=cmd_replay)

    q = sub.add_parser("query", help="replay a trace, then query the resulting state")
    replay_args(q)
    q.add_argument("selector", nargs=argparse.REMAINDER, help="focus <agent> | resolve <agent> <key> | cascade <agent>")
    q.set_defaults(func=cmd_query)

    e = sub.add_parser("evolve", help="promote frequently used resources into a generic context")
    e.add_argument("ontology")
    e.add_argument("records")
    e.add_argument("generic")
    e.add_argument("--p", type=float, default=0.6, help="minimum fraction of records (default 0.6)")
    e.add_argument("--n", type=int, default=3, help="minimum number of closed records (default 3)")
    e.add_argument("--out", help="where to write the updated ontology")
    e.set_defaults(func=cmd_evolve)

    s = sub.add_parser("serve", help="run the context manager as a network service")
    s.add_argument("ontology")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=7300, help="subscriber port (0 picks one)")
    s.add_argument("--ingest-port", type=int, default=7301, help="trace ingest port (0 picks one)")
    s.add_argument("--global", dest="globals", action="append", metavar="KEY=VALUE", default=[])
    s.add_argument("--confirm-policy", choices=CONFIRM_POLICIES, help="answer confirmations automatically")
    s.add_argument("--confirm-timeout", type=float, help="seconds to wait for a confirm-reply (default 30)")
    s.add_argument("--log", help="structured log file (default: stderr)")
    s.add_argument("--records", help="write behaviour records here on shutdown")
    s.set_defaults(func=cmd_serve)

    d = sub.add_parser("demo-subscriber", help="connect a demo context-aware application")
    d.add_argument("host", nargs="?", default="127.0.0.1")
    d.add_argument("port", nargs="?", type=int, default=7300)
    d.add_argument("--app-id", default="demo")
    d.add_argument("--agent-filter", help="comma-separated agent ids")
    d.add_argument("--confirm", choices=("first", "second", "none"), default="first")
    d.set_defaults(func=cmd_demo_subscriber)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except _Exit as exc:
        print(str(exc), file=sys.stderr)
        return exc.code
    except ModelError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
