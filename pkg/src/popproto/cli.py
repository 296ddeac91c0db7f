"""``popproto`` command line.

Every command prints JSON objects, one per line, with sorted keys. Only the
``elapsed_s`` field varies between identical invocations.

Exit codes: 0 success, 1 verification failure or no stabilization,
2 usage or parse error, 3 exploration cap exceeded.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path
from typing import Callable

from popproto import __version__
from popproto.analysis import (
    DEFAULT_CAP,
    ExplorationCapExceeded,
    RelationOracle,
    all_inputs,
    check_edge_invariant,
    check_invariant,
    doubling_f,
    doubling_graph,
    equality_path,
    explore,
    graph_records,
    identity_relation,
    oracle_stop,
    reachability_oracle,
    reachable_pair_set,
    stable_outputs,
    verify_predicate,
    verify_relation,
)
from popproto.constructions import (
    compose_algorithm1,
    doubling,
    epidemic,
    identity,
    leader_election,
    noop,
    rank_protocol,
    rank_wrapper,
    reachability_freezer,
    single_valued_composite,
    single_valued_spec,
    toggle,
)
from popproto.core import (
    ConvergenceWindow,
    MaxSteps,
    Protocol,
    ProtocolError,
    RandomScheduler,
    format_bag,
    init_config,
    run,
)
from popproto.dsl import parse, serialize
from popproto.predicates import counting_predicate, local_conjunction
from popproto.semilinear import SpecError, parse_spec

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3


class UsageError(Exception):
    pass


# -- targets


class Target:
    """A protocol plus what the CLI knows about how to check it."""

    def __init__(self, protocol: Protocol, source: str, kind: str = "file",
                 oracle: Callable[[], tuple[str, object]] | None = None, extra: dict | None = None):
        self.protocol = protocol
        self.source = source
        self.kind = kind
        self.oracle = oracle
        self.extra = extra or {}

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.source.encode()).hexdigest()[:16]


BASES = {"noop": noop, "epidemic": epidemic, "toggle": toggle, "identity": identity,
         "leader-election": leader_election}

LOCAL_TESTS = {
    "y=x": lambda x, y: x == y,
    "y!=x": lambda x, y: x != y,
    "true": lambda x, y: True,
}

CONSTRUCTIONS = ("leader-election", "doubling", "epidemic", "toggle", "noop", "identity", "rank",
                 "freezer", "algorithm1", "single-valued", "rank-wrapper")


def _base(args) -> Protocol:
    try:
        return BASES[args.base]()
    except KeyError:
        raise UsageError(f"unknown base protocol {args.base!r} (choose from {', '.join(BASES)})") from None


def _embedded(text: str):
    kind, _, rest = text.partition(":")
    if kind == "local":
        if rest not in LOCAL_TESTS:
            raise UsageError(f"unknown local test {rest!r} (choose from {', '.join(LOCAL_TESTS)})")
        return local_conjunction(LOCAL_TESTS[rest], name=f"local_{rest.replace('!=', 'ne').replace('=', 'eq')}")
    if kind == "count":
        return counting_predicate(parse_spec(rest))
    raise UsageError(f"embedded predicate must be local:<test> or count:<spec>, got {text!r}")


def build_target(args) -> Target:
    name = args.target
    path = Path(name)
    if name.endswith(".pp") or path.is_file():
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise UsageError(f"cannot read {name}: {e}") from None
        return Target(parse(text), text)
    if name not in CONSTRUCTIONS:
        raise UsageError(f"unknown construction {name!r} (choose from {', '.join(CONSTRUCTIONS)})")
    desc = name
    if name == "freezer":
        base = _base(args)
        desc += f" --base {args.base}"
        proto = reachability_freezer(base)
        return Target(proto, desc, name, lambda: ("relation", reachability_oracle(base)))
    if name == "algorithm1":
        emb = _embedded(args.embedded)
        desc += f" --embedded {args.embedded}"
        proto = compose_algorithm1(emb)
        return Target(proto, desc, name, lambda: ("relation", RelationOracle.from_spec(emb.spec)))
    if name == "single-valued":
        base = _base(args)
        desc += f" --base {args.base}"
        proto = single_valued_composite(base)
        return Target(proto, desc, name, lambda: ("predicate", single_valued_spec(base)))
    if name == "rank-wrapper":
        base = _base(args)
        desc += f" --base {args.base} --n0 {args.n0}"
        proto = rank_wrapper(base, args.n0, identity_relation())
        return Target(proto, desc, name, lambda: ("relation", identity_relation()), {"n0": args.n0})
    if name == "rank":
        desc += f" --n0 {args.n0}"
        return Target(rank_protocol(args.n0), desc, name, extra={"n0": args.n0})
    simple = {"leader-election": leader_election, "doubling": doubling, "epidemic": epidemic,
              "toggle": toggle, "noop": noop, "identity": identity}
    proto = simple[name]()
    oracle = (lambda: ("relation", identity_relation())) if name in ("identity", "noop") else None
    return Target(proto, desc, name, oracle)


# -- argument helpers


def parse_input(text: str) -> dict[str, int]:
    """``sym:count[,sym:count]*``; pair symbols are written ``(x|y)``."""
    out: dict[str, int] = {}
    for part in text.split(","):
        part = part.strip()
        sym, sep, num = part.rpartition(":")
        if not sep or not sym:
            raise UsageError(f"bad input entry {part!r}; expected sym:count")
        try:
            k = int(num)
        except ValueError:
            raise UsageError(f"bad count {num!r} in input entry {part!r}") from None
        if k < 0:
            raise UsageError(f"negative count in input entry {part!r}")
        out[sym] = out.get(sym, 0) + k
    if sum(out.values()) == 0:
        raise UsageError("input must contain at least one agent")
    return out


def parse_range(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = text.split("..")
            ns = list(range(int(lo), int(hi) + 1))
        elif "-" in text:
            lo, hi = text.split("-")
            ns = list(range(int(lo), int(hi) + 1))
        else:
            ns = sorted({int(t) for t in text.split(",")})
    except ValueError:
        raise UsageError(f"bad --n range {text!r}; use e.g. 3..5, 3-5 or 2,4") from None
    if not ns or min(ns) < 1:
        raise UsageError("population sizes must be at least 1")
    return ns


class Reporter:
    def __init__(self, args, stream=None):
        self.stream = stream
        self.command = args.command
        self.started = time.perf_counter()

    def emit(self, record: dict):
        (self.stream or sys.stdout).write(json.dumps(record, sort_keys=True) + "\n")

    def summary(self, record: dict, target: Target | None = None):
        record = dict(record)
        record["command"] = self.command
        record["tool_version"] = __version__
        if target is not None:
            record["protocol"] = target.protocol.name
            record["protocol_hash"] = target.digest
        record["elapsed_s"] = round(time.perf_counter() - self.started, 3)
        self.emit(record)


def _write_lines(path: str, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# -- commands


def cmd_generate(args, rep: Reporter) -> int:
    target = build_target(args)
    text = serialize(target.protocol)
    if args.emit:
        Path(args.emit).write_text(text, encoding="utf-8")
        rep.summary({"emit": args.emit, "states": len(target.protocol.close()),
                     "rules": len(target.protocol.rules())}, target)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cd(counts: dict) -> int:
    return counts.get("c", 0) + counts.get("d", 0)


def cmd_simulate(args, rep: Reporter) -> int:
    target = build_target(args)
    proto = target.protocol
    x = parse_input(args.input)
    init_config(proto, x)  # reject bad symbols before exploring
    if args.stop in ("oracle", "output-stable"):
        stop = oracle_stop(proto, x, args.cap, args.max_steps, terminal=args.stop == "oracle")
    elif args.stop == "window":
        stop = ConvergenceWindow(args.window, args.max_steps)
    else:
        stop = MaxSteps(args.max_steps)
    ex = run(proto, x, RandomScheduler(args.seed), stop)
    if args.emit:
        _write_lines(args.emit, ex.records())
    final = {proto.name_of(i): n for i, n in ex.final.items}
    record = {
        "input": x,
        "seed": args.seed,
        "stop": args.stop,
        "stopped": ex.stopped,
        "steps": len(ex.steps),
        "final": final,
        "output": format_bag(ex.output()),
    }
    if {"c", "d"} <= {s.name for s in proto.close()}:
        # running token count of the doubling protocol
        cfg = ex.initial.named(proto)
        running = [_cd(cfg)]
        for t in ex.steps:
            for s, dlt in ((t.initiator, -1), (t.responder, -1), (t.result[0], 1), (t.result[1], 1)):
                name = proto.name_of(s)
                cfg[name] = cfg.get(name, 0) + dlt
            running.append(_cd(cfg))
        record["c_plus_d"] = {"final": running[-1], "max": max(running), "initial": running[0]}
    rep.summary(record, target)
    if ex.stopped in ("stable", "converged", "single-agent"):
        return EXIT_OK
    return EXIT_OK if args.stop == "max-steps" else EXIT_FAIL


def cmd_explore(args, rep: Reporter) -> int:
    target = build_target(args)
    proto = target.protocol
    x = parse_input(args.input)
    graph = explore(proto, init_config(proto, x), args.cap)
    report = stable_outputs(proto, x, args.cap)
    if args.emit:
        _write_lines(args.emit, graph_records(graph))
    rep.summary({
        "input": x,
        "nodes": len(graph),
        "edges": graph.num_edges(),
        "terminal_components": len(graph.terminal),
        "output_stable": report.output_stable_protocol,
        "stable_outputs": sorted(format_bag(b) for b in report.projected()),
    }, target)
    return EXIT_OK


def cmd_verify(args, rep: Reporter) -> int:
    target = build_target(args)
    proto = target.protocol
    kind, oracle = _oracle(args, target)
    failed = capped = False
    ns = parse_range(args.n)
    records = []
    for n in ns:
        inputs = all_inputs(proto.input_alphabet, n)
        if kind == "predicate":
            report = verify_predicate(proto, oracle, inputs, args.cap)
        else:
            report = verify_relation(proto, oracle, inputs, args.cap)
        statuses = [v.status for v in report.verdicts]
        for v in report.verdicts:
            r = v.record()
            r["n"] = n
            records.append(r)
            if v.status != "PASS":
                rep.emit(r)
        status = "FAIL" if "FAIL" in statuses else ("CAP" if "CAP" in statuses else "PASS")
        failed |= status == "FAIL"
        capped |= status == "CAP"
        rep.emit({"n": n, "status": status, "inputs": len(statuses),
                  "max_nodes": max(v.nodes for v in report.verdicts)})
    if args.emit:
        _write_lines(args.emit, records)
    rep.summary({"n": ns, "oracle": args.oracle or "default",
                 "status": "FAIL" if failed else ("CAP" if capped else "PASS")}, target)
    return EXIT_FAIL if failed else (EXIT_CAP if capped else EXIT_OK)


def _oracle(args, target: Target):
    text = args.oracle
    if not text:
        if target.oracle is None:
            raise UsageError("no default oracle for this protocol; pass --oracle")
        return target.oracle()
    if text == "identity":
        return "relation", identity_relation()
    if text.startswith("relation:"):
        return "relation", RelationOracle.from_spec(parse_spec(text[len("relation:"):]))
    if text.startswith("predicate:"):
        return "predicate", parse_spec(text[len("predicate:"):])
    if text == "reachability":
        if target.kind != "freezer":
            raise UsageError("the reachability oracle needs the freezer construction")
        return target.oracle()
    raise UsageError(f"unknown oracle {text!r}")


def cmd_demo(args, rep: Reporter) -> int:
    ok = True
    for k in range(args.k_min, args.k_max + 1):
        blanks = args.blanks if args.blanks is not None else 2 ** (k + 1) - 1
        pairs = reachable_pair_set(k, blanks, args.cap)
        ells = {ell for ell, _ in pairs}
        top = 2 ** (k + 1)
        row = {
            "k": k,
            "blanks": blanks,
            "max_c_plus_d": max(ells),
            "expected_max": top,
            "full_range": set(range(1, top + 1)) <= ells,
        }
        row["ok"] = row["max_c_plus_d"] == top and row["full_range"]
        ok &= row["ok"]
        rep.emit(row)
    rep.summary({"status": "PASS" if ok else "FAIL"})
    return EXIT_OK if ok else EXIT_FAIL


def _invariants(target: Target, args) -> list[tuple[str, Callable]]:
    size = ("population size preserved",
            lambda g: check_edge_invariant(g, lambda a, b: sum(a.values()) == sum(b.values())))
    checks = [size]
    kind = target.kind
    if kind == "leader-election":
        checks.append(("at least one L", lambda g: check_invariant(g, lambda c: c.get("L", 0) >= 1)))
    if kind == "algorithm1":
        checks.append(("at least one leader bit",
                       lambda g: check_invariant(g, lambda c: any(q[2] for q in c))))
    if kind == "doubling":
        checks += [
            ("exactly one controller",
             lambda g: check_invariant(g, lambda c: sum(c.get(q, 0) for q in "1234") == 1)),
            ("f non-increasing",
             lambda g: check_edge_invariant(g, lambda a, b: doubling_f(b) <= doubling_f(a))),
            ("c+d non-decreasing", lambda g: check_edge_invariant(g, lambda a, b: _cd(b) >= _cd(a))),
        ]
    if kind == "rank-wrapper":
        checks += [
            ("rank never decreases", lambda g: check_edge_invariant(g, _ranks_monotone)),
        ]
    return checks


def _ranks_monotone(a: dict, b: dict) -> bool:
    # multiset form: the sorted ranks can only move up pointwise
    ra = sorted(r for q, n in a.items() for r in [q[0]] * n)
    rb = sorted(r for q, n in b.items() for r in [q[0]] * n)
    return all(x <= y for x, y in zip(ra, rb))


def cmd_invariants(args, rep: Reporter) -> int:
    target = build_target(args)
    proto = target.protocol
    checks = _invariants(target, args)
    if target.kind == "doubling":
        blanks = args.blanks if args.blanks is not None else 2 ** (args.k + 1) - 1
        graphs = [(f"k={args.k},blanks={blanks}", doubling_graph(args.k, blanks, args.cap))]
    else:
        graphs = []
        for n in parse_range(args.n):
            for x in all_inputs(proto.input_alphabet, n):
                graphs.append((format_bag(x), explore(proto, init_config(proto, dict(x)), args.cap)))
    ok = True
    for label, graph in graphs:
        for name, check in checks:
            res = check(graph)
            row = {"input": label, "invariant": name, "holds": res.holds, "checked": res.checked}
            if not res.holds:
                row["counterexample"] = [c.named(proto) for c in res.counterexample]
                ok = False
            rep.emit(row)
        if target.kind == "doubling":
            path = equality_path(graph)
            top = 2 ** (args.k + 1)
            reached = path is not None and _cd(graph.counts(path[-1])) == top
            ok &= reached
            rep.emit({"input": label, "invariant": f"f-preserving path to c+d={top}", "holds": reached})
    rep.summary({"status": "PASS" if ok else "FAIL"}, target)
    return EXIT_OK if ok else EXIT_FAIL


# -- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="popproto", description="Population protocol laboratory.")
    p.add_argument("--version", action="version", version=f"popproto {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def target(sp):
        sp.add_argument("target", help=f".pp file or construction ({', '.join(CONSTRUCTIONS)})")
        sp.add_argument("--base", default=None, help=f"base protocol ({', '.join(BASES)})")
        sp.add_argument("--embedded", default="local:y=x",
                        help="algorithm1 predicate: local:y=x, local:y!=x, local:true or count:<spec>")
        sp.add_argument("--n0", type=int, default=3, help="size threshold for rank and rank-wrapper")

    def common(sp):
        sp.add_argument("--cap", type=int, default=DEFAULT_CAP, help="exploration node cap")
        sp.add_argument("--emit", default=None, help="write JSON-lines detail to this path")

    g = sub.add_parser("generate", help="write a construction as .pp text")
    target(g)
    g.add_argument("--emit", default=None, help="output path (default: stdout)")

    s = sub.add_parser("simulate", help="seeded random run")
    target(s)
    common(s)
    s.add_argument("--input", required=True, help="sym:count[,sym:count]*")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--stop", choices=("oracle", "output-stable", "window", "max-steps"),
                   default="oracle",
                   help="oracle: output-stable inside a terminal component")
    s.add_argument("--max-steps", type=int, default=1_000_000)
    s.add_argument("--window", type=int, default=None, help="convergence window (default 1000 n)")

    e = sub.add_parser("explore", help="configuration graph summary for one input")
    target(e)
    common(e)
    e.add_argument("--input", required=True, help="sym:count[,sym:count]*")

    v = sub.add_parser("verify", help="exhaustive check against an oracle over a range of n")
    target(v)
    common(v)
    v.add_argument("--n", default="3..5", help="population sizes, e.g. 3..5")
    v.add_argument("--oracle", default=None,
                   help="identity, reachability, relation:<spec> or predicate:<spec>")

    d = sub.add_parser("demo-nonsemilinear", help="doubling protocol reachable (c+d, k) table")
    d.add_argument("--k-min", type=int, default=0)
    d.add_argument("--k-max", type=int, default=3)
    d.add_argument("--blanks", type=int, default=None, help="default 2^(k+1)-1")
    d.add_argument("--cap", type=int, default=DEFAULT_CAP)

    i = sub.add_parser("invariants", help="check invariants over every reachable configuration")
    target(i)
    common(i)
    i.add_argument("--n", default="3..5")
    i.add_argument("--k", type=int, default=1, help="doubling: number of a agents")
    i.add_argument("--blanks", type=int, default=None, help="doubling: default 2^(k+1)-1")
    return p


COMMANDS = {
    "generate": cmd_generate,
    "simulate": cmd_simulate,
    "explore": cmd_explore,
    "verify": cmd_verify,
    "demo-nonsemilinear": cmd_demo,
    "invariants": cmd_invariants,
}

DEFAULT_BASE = {"freezer": "epidemic", "single-valued": "identity", "rank-wrapper": "identity"}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if getattr(args, "target", None) and args.base is None:
        args.base = DEFAULT_BASE.get(args.target, "identity")
    rep = Reporter(args)
    try:
        return COMMANDS[args.command](args, rep)
    except ExplorationCapExceeded as e:
        rep.summary({"status": "CAP", "error": str(e)})
        return EXIT_CAP
    except (UsageError, ProtocolError, SpecError, ValueError) as e:
        sys.stderr.write(f"popproto: error: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
