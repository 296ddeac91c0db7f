"""Exact stable-computation semantics by configuration-graph analysis.

Under global fairness an execution on a finite configuration space
eventually stays inside one terminal strongly connected component of the
reachable configuration graph and visits every configuration of it
infinitely often: if a configuration recurs, every successor of it
recurs, so the recurring set is closed under successors, hence a union
of terminal components, and being connected through the execution it is
exactly one. A fair execution therefore stabilizes iff its terminal
component has a single output, and the possible stable outputs for an
input are exactly the uniform outputs of the reachable terminal
components.

Relations are handled through their zip: before exploring, every agent
is tagged with its input symbol, so outputs become multisets of
``(input, output)`` pairs.
"""

from __future__ import annotations

import itertools
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Iterator, Mapping, Sequence

from popproto.core import (
    Bag,
    Configuration,
    OracleStable,
    Protocol,
    ProtocolError,
    Transition,
    bag,
    bag_size,
    format_bag,
    init_config,
    output,
    step_items,
    to_bag,
)
from popproto.semilinear import PredicateSpec, eval_semilinear, pair_symbol

DEFAULT_CAP = 10**6


class ExplorationCapExceeded(RuntimeError):
    def __init__(self, cap: int, frontier: int):
        self.cap = cap
        self.frontier = frontier
        super().__init__(
            f"configuration graph exceeds {cap} nodes with {frontier} configurations still "
            f"unexplored; try a smaller population or raise --cap")


@dataclass
class ConfigGraph:
    protocol: Protocol
    nodes: list[tuple]
    index: dict[tuple, int]
    succ: list[list[tuple[int, int, int]]]  # (target, initiator, responder), self-loops dropped
    parent: list[tuple[int, int, int] | None]
    scc: list[int] = field(default_factory=list)
    components: list[list[int]] = field(default_factory=list)
    terminal: set[int] = field(default_factory=set)

    root = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def config(self, node: int) -> Configuration:
        return Configuration(self.nodes[node])

    def num_edges(self) -> int:
        return sum(len(s) for s in self.succ)

    def counts(self, node: int) -> dict:
        """Label-level counts of a node."""
        return {self.protocol.label(i): n for i, n in self.nodes[node]}

    def output(self, node: int) -> Bag:
        return output(self.protocol, self.config(node))

    def path_to(self, node: int) -> list[Transition]:
        """Shortest transition sequence from the root, via BFS parents."""
        steps = []
        while self.parent[node] is not None:
            prev, i, j = self.parent[node]
            steps.append(Transition(i, j, self.protocol.delta(i, j)))
            node = prev
        steps.reverse()
        return steps

    def terminal_nodes(self) -> Iterator[int]:
        for c in sorted(self.terminal):
            yield from self.components[c]


def explore(protocol: Protocol, initial: Configuration, cap: int = DEFAULT_CAP) -> ConfigGraph:
    """Breadth-first closure of the step relation from ``initial``."""
    if cap < 1:
        raise ValueError("cap must be positive")
    root = initial.items
    nodes = [root]
    index = {root: 0}
    succ: list[list[tuple[int, int, int]]] = []
    parent: list = [None]
    delta = protocol.delta
    k = 0
    while k < len(nodes):
        items = nodes[k]
        out: dict[int, tuple[int, int, int]] = {}
        for i, ni in items:
            for j, nj in items:
                if i == j and ni < 2:
                    continue
                a, b = delta(i, j)
                if (a, b) == (i, j) or (a, b) == (j, i):
                    continue
                nxt = step_items(items, i, j, a, b)
                if nxt == items:
                    continue
                t = index.get(nxt)
                if t is None:
                    if len(nodes) >= cap:
                        raise ExplorationCapExceeded(cap, len(nodes) - k)
                    t = len(nodes)
                    nodes.append(nxt)
                    index[nxt] = t
                    parent.append((k, i, j))
                if t not in out:
                    out[t] = (t, i, j)
        succ.append(list(out.values()))
        k += 1
    graph = ConfigGraph(protocol, nodes, index, succ, parent)
    graph.scc, graph.components = tarjan_scc(len(nodes), [[t for t, _, _ in s] for s in succ])
    graph.terminal = {
        c for c, members in enumerate(graph.components)
        if all(graph.scc[t] == c for v in members for t, _, _ in succ[v])
    }
    return graph


def tarjan_scc(n: int, adj: Sequence[Sequence[int]]) -> tuple[list[int], list[list[int]]]:
    """Iterative Tarjan. Components come out in reverse topological order."""
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    comp = [-1] * n
    components: list[list[int]] = []
    stack: list[int] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pos = work.pop()
            if pos == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            else:
                w = adj[v][pos - 1]
                low[v] = min(low[v], low[w])
            nbrs = adj[v]
            while pos < len(nbrs):
                w = nbrs[pos]
                pos += 1
                if index[w] == -1:
                    work.append((v, pos))
                    work.append((w, 0))
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            else:
                if low[v] == index[v]:
                    members = []
                    while True:
                        w = stack.pop()
                        on_stack[w] = False
                        comp[w] = len(components)
                        members.append(w)
                        if w == v:
                            break
                    members.sort()
                    components.append(members)
    return comp, components


# -- input tagging


def tag_inputs(protocol: Protocol) -> Protocol:
    """Product of ``protocol`` with a passive per-agent copy of its input symbol.

    Outputs of the tagged protocol are ``(input, output)`` pairs, so the
    output multiset of a configuration is the zip of input and output.
    """
    cached = getattr(protocol, "_tagged", None)
    if cached is not None:
        return cached
    base = protocol

    def step(p, q):
        a, b = base.delta(p[1], q[1])
        return (p[0], a), (q[0], b)

    tagged = Protocol(
        f"{protocol.name}+inputs",
        {x: (x, protocol.input_state(x)) for x in protocol.input_alphabet},
        lambda s: (s[0], base.output_of(s[1])),
        step,
        state_name=lambda s: f"{s[0]}@{base.name_of(s[1])}",
        output_alphabet=[(x, y) for x in protocol.input_alphabet for y in protocol.output_alphabet],
    )
    protocol._tagged = tagged
    return tagged


def untag(tagged: Protocol, protocol: Protocol, t: Transition) -> tuple[str, str]:
    return (protocol.name_of(tagged.label(t.initiator)[1]),
            protocol.name_of(tagged.label(t.responder)[1]))


# -- stable outputs


@dataclass
class NonStableWitness:
    """A terminal component whose configurations disagree on the output."""

    component: int
    outputs: list[Bag]
    cycle: list[tuple[str, str]]  # interactions leading around the component

    def describe(self) -> str:
        return (f"terminal component {self.component} mixes outputs "
                + ", ".join(format_bag(o) for o in self.outputs[:4]))


@dataclass
class StableComputationReport:
    input: Bag
    output_stable_protocol: bool
    stable_outputs: frozenset  # zipped multisets of (input, output)
    witnesses: dict  # stable output -> list of (initiator name, responder name)
    nonstable: list[NonStableWitness]
    nodes: int
    edges: int
    terminal_components: int

    def projected(self) -> frozenset:
        """Stable outputs with the input side dropped."""
        out = set()
        for z in self.stable_outputs:
            c: Counter = Counter()
            for (x, y), n in z:
                c[y] += n
            out.add(bag(c))
        return frozenset(out)


def _component_outputs(graph: ConfigGraph, members: list[int]) -> dict[Bag, int]:
    seen: dict[Bag, int] = {}
    for v in members:
        seen.setdefault(graph.output(v), v)
    return seen


def _path_within(graph: ConfigGraph, src: int, dst: int, allowed: set[int]) -> list[tuple[int, int]]:
    prev = {src: None}
    q = deque([src])
    while q:
        v = q.popleft()
        if v == dst:
            break
        for t, i, j in graph.succ[v]:
            if t in allowed and t not in prev:
                prev[t] = (v, i, j)
                q.append(t)
    steps = []
    v = dst
    while prev.get(v) is not None:
        u, i, j = prev[v]
        steps.append((i, j))
        v = u
    return list(reversed(steps))


def analyze_terminals(graph: ConfigGraph, names: Callable[[int, int], tuple[str, str]] | None = None):
    protocol = graph.protocol
    if names is None:
        names = lambda i, j: (protocol.name_of(i), protocol.name_of(j))
    stable: dict[Bag, list] = {}
    nonstable: list[NonStableWitness] = []
    for c in sorted(graph.terminal):
        members = graph.components[c]
        outs = _component_outputs(graph, members)
        if len(outs) == 1:
            (o, v), = outs.items()
            if o not in stable:
                stable[o] = [names(t.initiator, t.responder) for t in graph.path_to(v)]
        else:
            (o1, v1), (o2, v2) = list(outs.items())[:2]
            allowed = set(members)
            cycle = _path_within(graph, v1, v2, allowed) + _path_within(graph, v2, v1, allowed)
            nonstable.append(NonStableWitness(c, sorted(outs), [names(i, j) for i, j in cycle]))
    return stable, nonstable


def stable_outputs(protocol: Protocol, input: Mapping[str, int] | Iterable[str],
                   cap: int = DEFAULT_CAP) -> StableComputationReport:
    tagged = tag_inputs(protocol)
    initial = init_config(tagged, input)
    graph = explore(tagged, initial, cap)
    stable, nonstable = analyze_terminals(graph, lambda i, j: untag(tagged, protocol, Transition(i, j, (i, j))))
    return StableComputationReport(
        input=to_bag(input),
        output_stable_protocol=not nonstable,
        stable_outputs=frozenset(stable),
        witnesses=stable,
        nonstable=nonstable,
        nodes=len(graph),
        edges=graph.num_edges(),
        terminal_components=len(graph.terminal),
    )


def output_stable_nodes(graph: ConfigGraph) -> list[bool]:
    """Per node: does every configuration reachable from it share its output?"""
    # components arrive sinks-first, so successors are settled before use
    unique: list[Bag | None] = [None] * len(graph.components)
    mixed = object()
    for c, members in enumerate(graph.components):
        val = None
        for v in members:
            o = graph.output(v)
            if val is None:
                val = o
            elif val != o:
                val = mixed
                break
            for t, _, _ in graph.succ[v]:
                d = graph.scc[t]
                if d != c:
                    u = unique[d]
                    if u is mixed or u != val:
                        val = mixed
                        break
            if val is mixed:
                break
        unique[c] = val
    return [unique[graph.scc[v]] is not mixed for v in range(len(graph))]


def oracle_stop(protocol: Protocol, input: Mapping[str, int] | Iterable[str],
                cap: int = DEFAULT_CAP, max_steps: int = 10_000_000,
                terminal: bool = True) -> OracleStable:
    """Stop policy halting at the first output-stable configuration.

    With ``terminal`` (the default) the configuration must also lie in a
    terminal component, i.e. the run has reached where fair executions
    circulate; otherwise a protocol with a constant output would stop
    before taking any step.
    """
    graph = explore(protocol, init_config(protocol, input), cap)
    stable = output_stable_nodes(graph)
    stable_items = {graph.nodes[v] for v in range(len(graph))
                    if stable[v] and (not terminal or graph.scc[v] in graph.terminal)}
    return OracleStable(lambda config: config.items in stable_items, max_steps)


# -- oracles


@dataclass(frozen=True)
class RelationOracle:
    """Ground truth for a relation, as a predicate on zipped multisets.

    ``evaluator`` receives a multiset of ``(x, y)`` pairs.
    """

    evaluator: Callable[[Bag], bool] = field(compare=False)
    description: str = ""

    def __call__(self, zipped: Bag) -> bool:
        return self.evaluator(zipped)

    @classmethod
    def from_spec(cls, spec: PredicateSpec) -> "RelationOracle":
        """Relation whose zip is the semilinear predicate ``spec`` over ``(x|y)`` symbols."""

        def ev(z):
            return eval_semilinear(spec, {pair_symbol(x, y): n for (x, y), n in z})

        return cls(ev, str(spec))


def identity_relation() -> RelationOracle:
    return RelationOracle(lambda z: all(x == y for (x, y), _ in z), "for all i: y_i = x_i")


def all_inputs(alphabet: Sequence[str], n: int) -> list[Bag]:
    """Every multiset of size ``n`` over ``alphabet``."""
    return [bag(c) for c in itertools.combinations_with_replacement(alphabet, n)]


def zipped_candidates(input: Bag, outputs: Sequence) -> list[Bag]:
    """Every zipped multiset whose input side is ``input``."""
    groups = []
    for x, n in input:
        groups.append([[(x, y) for y in ys] for ys in itertools.combinations_with_replacement(outputs, n)])
    return [bag(itertools.chain.from_iterable(choice)) for choice in itertools.product(*groups)]


@dataclass
class InputVerdict:
    input: Bag
    status: str  # PASS, FAIL or CAP
    missing: list[Bag] = field(default_factory=list)
    extra: list[Bag] = field(default_factory=list)
    nonstable: list[NonStableWitness] = field(default_factory=list)
    witnesses: dict = field(default_factory=dict)
    detail: str = ""
    nodes: int = 0

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def record(self) -> dict:
        rec = {"input": format_bag(self.input), "status": self.status, "nodes": self.nodes}
        if self.missing:
            rec["missing"] = [format_bag(b) for b in self.missing]
        if self.extra:
            rec["extra"] = [format_bag(b) for b in self.extra]
            rec["extra_witness"] = [list(s) for s in self.witnesses.get(self.extra[0], [])]
        if self.nonstable:
            w = self.nonstable[0]
            rec["nonstable"] = w.describe()
            rec["cycle"] = [list(s) for s in w.cycle]
        if self.detail:
            rec["detail"] = self.detail
        return rec


@dataclass
class VerificationReport:
    verdicts: list[InputVerdict]

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def failures(self) -> list[InputVerdict]:
        return [v for v in self.verdicts if not v.passed]


def verify_relation(protocol: Protocol, oracle: RelationOracle, inputs: Iterable,
                    cap: int = DEFAULT_CAP, outputs: Sequence | None = None) -> VerificationReport:
    outputs = protocol.output_alphabet if outputs is None else outputs
    verdicts = []
    for x in inputs:
        x = to_bag(x)
        try:
            rep = stable_outputs(protocol, dict(x), cap)
        except ExplorationCapExceeded as e:
            verdicts.append(InputVerdict(x, "CAP", detail=str(e)))
            continue
        expected = {z for z in zipped_candidates(x, outputs) if oracle(z)}
        got = set(rep.stable_outputs)
        missing = sorted(expected - got)
        extra = sorted(got - expected)
        ok = rep.output_stable_protocol and not missing and not extra
        verdicts.append(InputVerdict(x, "PASS" if ok else "FAIL", missing, extra,
                                     rep.nonstable, rep.witnesses, nodes=rep.nodes))
    return VerificationReport(verdicts)


def verify_predicate(protocol: Protocol, spec: PredicateSpec | Callable[[Bag], bool],
                     inputs: Iterable, cap: int = DEFAULT_CAP,
                     true: Hashable = "1", false: Hashable = "0") -> VerificationReport:
    if set(protocol.output_alphabet) - {true, false}:
        raise ProtocolError(f"predicate protocols must output only {true!r}/{false!r}")
    verdicts = []
    for x in inputs:
        x = to_bag(x)
        try:
            rep = stable_outputs(protocol, dict(x), cap)
        except ExplorationCapExceeded as e:
            verdicts.append(InputVerdict(x, "CAP", detail=str(e)))
            continue
        truth = spec(dict(x)) if isinstance(spec, PredicateSpec) else spec(x)
        want = ((true if truth else false), bag_size(x))
        got = rep.projected()
        detail = ""
        if len(got) > 1:
            detail = "multiple distinct stable outputs (not predicate behaviour)"
        ok = rep.output_stable_protocol and got == {(want,)}
        missing = [] if (want,) in got else [(want,)]
        extra = sorted(got - {(want,)})
        verdicts.append(InputVerdict(x, "PASS" if ok else "FAIL", missing, extra,
                                     rep.nonstable, {}, detail, rep.nodes))
    return VerificationReport(verdicts)


# -- invariants


@dataclass
class InvariantResult:
    holds: bool
    counterexample: list[Configuration] | None = None  # shortest path from the root
    checked: int = 0

    def __bool__(self) -> bool:
        return self.holds


def _root_path(graph: ConfigGraph, node: int) -> list[Configuration]:
    path = [node]
    while graph.parent[path[-1]] is not None:
        path.append(graph.parent[path[-1]][0])
    return [graph.config(v) for v in reversed(path)]


def check_invariant(graph: ConfigGraph, predicate: Callable[[dict], bool]) -> InvariantResult:
    """Evaluate ``predicate`` on label-level counts of every node.

    BFS order means the first violation found has a shortest root path.
    """
    for v in range(len(graph)):
        if not predicate(graph.counts(v)):
            return InvariantResult(False, _root_path(graph, v), v + 1)
    return InvariantResult(True, None, len(graph))


def check_edge_invariant(graph: ConfigGraph, relation: Callable[[dict, dict], bool]) -> InvariantResult:
    """Evaluate ``relation(before, after)`` on every edge."""
    checked = 0
    for v in range(len(graph)):
        before = graph.counts(v)
        for t, _, _ in graph.succ[v]:
            checked += 1
            if not relation(before, graph.counts(t)):
                return InvariantResult(False, _root_path(graph, v) + [graph.config(t)], checked)
    return InvariantResult(True, None, checked)


# -- independent reachability oracle


def reachable_vectors(protocol: Protocol, start: Sequence[Hashable]) -> set[tuple]:
    """All agent-indexed configurations reachable from ``start`` (state labels).

    Deliberately agent-indexed and free of the count-vector machinery, so it
    can serve as an independent oracle for it.
    """
    ids = tuple(protocol.state_id(s) for s in start)
    seen = {ids}
    queue = deque([ids])
    n = len(ids)
    while queue:
        v = queue.popleft()
        for a in range(n):
            for b in range(n):
                if a == b:
                    continue
                ra, rb = protocol.delta(v[a], v[b])
                w = list(v)
                w[a], w[b] = ra, rb
                w = tuple(w)
                if w not in seen:
                    seen.add(w)
                    queue.append(w)
    return {tuple(protocol.label(i) for i in v) for v in seen}


def reachability_oracle(protocol: Protocol) -> RelationOracle:
    """``z`` holds iff the y-side configuration is reachable from the x-side one,
    agent by agent, in ``protocol``; x and y symbols are state names."""
    cache: dict[Bag, set[Bag]] = {}

    def reachable_zips(xs: Bag) -> set[Bag]:
        if xs not in cache:
            start = [x for x, n in xs for _ in range(n)]
            labels = [protocol.label(protocol.id_of_name(x)) for x in start]
            found = set()
            for vec in reachable_vectors(protocol, labels):
                found.add(bag(zip(start, (protocol.name_of(protocol.state_id(l)) for l in vec))))
            cache[xs] = found
        return cache[xs]

    def ev(z: Bag) -> bool:
        xs: Counter = Counter()
        for (x, _), n in z:
            xs[x] += n
        return z in reachable_zips(bag(xs))

    return RelationOracle(ev, f"reachability in {protocol.name}")


def reachable_multisets(protocol: Protocol, input: Bag) -> set[Bag]:
    """Reachable configurations of ``protocol`` from ``input`` as multisets of state names."""
    start = [x for x, n in input for _ in range(n)]
    labels = [protocol.label(protocol.input_state(x)) for x in start]
    return {bag(protocol.name_of(protocol.state_id(l)) for l in vec)
            for vec in reachable_vectors(protocol, labels)}


# -- doubling protocol arithmetic


def doubling_f(counts: Mapping) -> int:
    """Potential of a doubling configuration with exactly one controller agent."""
    controllers = [q for q in ("1", "2", "3", "4") if counts.get(q, 0)]
    if len(controllers) != 1 or counts[controllers[0]] != 1:
        raise ValueError("f is defined only with exactly one numbered agent")
    q = controllers[0]
    a, c, d = (counts.get(s, 0) for s in "acd")
    base = {"1": 2 * c + d, "2": 2 * c + d + 1, "3": 2 * d + c, "4": 2 * d + c + 1}[q]
    return 2**a * base


def doubling_initial(k: int, blanks: int) -> dict[str, int]:
    return {"1": 1, "a": k, "c": 1, "b": blanks}


def doubling_graph(k: int, blanks: int, cap: int = DEFAULT_CAP) -> ConfigGraph:
    from popproto.constructions import doubling

    proto = doubling()
    return explore(proto, init_config(proto, doubling_initial(k, blanks)), cap)


def reachable_pair_set(k: int, blanks: int, cap: int = DEFAULT_CAP) -> set[tuple[int, int]]:
    """Pairs ``(c + d, k)`` over reachable doubling configurations."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if blanks < 2 ** (k + 1) - 1:
        raise ValueError(f"need at least {2 ** (k + 1) - 1} blanks for k={k}")
    graph = doubling_graph(k, blanks, cap)
    out = set()
    for v in range(len(graph)):
        c = graph.counts(v)
        out.add((c.get("c", 0) + c.get("d", 0), k))
    return out


def equality_path(graph: ConfigGraph) -> list[int] | None:
    """Path from the root along f-preserving edges to a node with a = 0 and c*d = 0
    maximizing c + d; returns node ids or None."""
    f0 = doubling_f(graph.counts(0))
    prev = {0: None}
    q = deque([0])
    best = None
    while q:
        v = q.popleft()
        cnt = graph.counts(v)
        if cnt.get("a", 0) == 0 and cnt.get("c", 0) * cnt.get("d", 0) == 0:
            s = cnt.get("c", 0) + cnt.get("d", 0)
            if best is None or s > best[0]:
                best = (s, v)
        for t, _, _ in graph.succ[v]:
            if t not in prev and doubling_f(graph.counts(t)) == f0:
                prev[t] = v
                q.append(t)
    if best is None:
        return None
    path = [best[1]]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return list(reversed(path))


# -- export


def graph_records(graph: ConfigGraph) -> Iterator[dict]:
    p = graph.protocol
    for v, items in enumerate(graph.nodes):
        yield {
            "node": v,
            "counts": {p.name_of(i): n for i, n in items},
            "scc": graph.scc[v],
            "terminal": graph.scc[v] in graph.terminal,
        }
    for v, s in enumerate(graph.succ):
        for t, i, j in s:
            yield {"edge": [v, t], "initiator": p.name_of(i), "responder": p.name_of(j)}
