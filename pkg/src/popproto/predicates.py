"""Embedded predicate protocols with stabilizing inputs.

An embedded predicate runs on per-agent pair symbols ``(x|y)`` that may
be changed from outside (through :meth:`EmbeddedPredicate.on_input_change`)
finitely often. Its per-agent ``frozen`` bit must eventually settle on the
truth value of its ground-truth spec for the final pair multiset.

Two flavours of that contract exist here. *Uniform* instances settle
every agent's bit on the truth value. *Local* instances settle each
agent's bit on a per-agent test, so that all bits are 1 exactly when the
predicate holds; this is all a gate for the relation composite needs when
the predicate is a conjunction of per-agent tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

from popproto.analysis import (
    DEFAULT_CAP,
    ConfigGraph,
    ExplorationCapExceeded,
    all_inputs,
    explore,
)
from popproto.core import Bag, Configuration, Protocol, bag, format_bag, init_config
from popproto.semilinear import (
    Congruence,
    PredicateSpec,
    SpecError,
    Threshold,
    none_of,
    pair_symbol,
    split_pair,
)

MAX_RANGE = 64

BINARY_PAIRS = tuple(pair_symbol(x, y) for x in "01" for y in "01")


class EmbeddedPredicate:
    name: str = "embedded"
    alphabet: tuple[str, ...] = ()
    spec: PredicateSpec
    uniform: bool = True

    def initial(self, pair: str) -> Hashable:
        raise NotImplementedError

    def delta(self, q1: Hashable, q2: Hashable) -> tuple[Hashable, Hashable]:
        raise NotImplementedError

    def frozen(self, q: Hashable) -> int:
        raise NotImplementedError

    def on_input_change(self, q: Hashable, pair: str) -> Hashable:
        raise NotImplementedError

    def pair_of(self, q: Hashable) -> str:
        return q[0]

    def state_name(self, q: Hashable) -> str:
        return ".".join(str(f) for f in q)

    def as_protocol(self) -> Protocol:
        """The predicate run on its own: inputs are pair symbols, output is frozen."""
        cached = self.__dict__.get("_protocol")
        if cached is None:
            cached = Protocol(
                f"embedded-{self.name}",
                {p: self.initial(p) for p in self.alphabet},
                lambda q: str(self.frozen(q)),
                self.delta,
                state_name=self.state_name,
                output_alphabet=("0", "1"),
            )
            self._protocol = cached
        return cached


@dataclass(eq=False)
class LocalConjunction(EmbeddedPredicate):
    """Predicate ``for all i: test(x_i, y_i)``.

    State is ``(pair, frozen)``. The bit starts at 0 and an interaction
    sets it to the agent's own test, so a candidate output can still be
    moved before it is ever locked. An input change clears the bit.
    """

    test: Callable[[str, str], bool]
    alphabet: tuple[str, ...] = BINARY_PAIRS
    name: str = "local"
    uniform = False

    def __post_init__(self):
        bad = [p for p in self.alphabet if not self._ok(p)]
        self.spec = none_of(bad, self.alphabet)

    def _ok(self, pair: str) -> int:
        x, y = split_pair(pair)
        return int(bool(self.test(x, y)))

    def initial(self, pair):
        return (pair, 0)

    def delta(self, q1, q2):
        return (q1[0], self._ok(q1[0])), (q2[0], self._ok(q2[0]))

    def frozen(self, q):
        return q[1]

    def on_input_change(self, q, pair):
        return (pair, 0)

    def state_name(self, q):
        return f"{q[0]}.f{q[1]}"


def local_conjunction(test: Callable[[str, str], bool], alphabet: Sequence[str] = BINARY_PAIRS,
                      name: str = "local") -> LocalConjunction:
    return LocalConjunction(test, tuple(alphabet), name)


@dataclass(frozen=True)
class _AtomCounter:
    weights: dict = field(hash=False)
    bound: int  # threshold atoms: values live in [-bound, bound]
    modulus: int  # congruence atoms; 0 for thresholds
    target: int  # threshold constant or residue

    def w(self, pair: str) -> int:
        v = self.weights.get(pair, 0)
        return v % self.modulus if self.modulus else v

    def combine(self, u: int, v: int) -> tuple[int, int]:
        """Move as much of ``v`` into ``u`` as fits; the sum is conserved."""
        if self.modulus:
            return (u + v) % self.modulus, 0
        s = u + v
        keep = max(-self.bound, min(self.bound, s))
        return keep, s - keep

    def shift(self, v: int, old: int, new: int) -> int | None:
        if self.modulus:
            return (v + new - old) % self.modulus
        nv = v + new - old
        return nv if -self.bound <= nv <= self.bound else None

    def holds(self, v: int) -> bool:
        return v == self.target if self.modulus else v >= self.target


@dataclass(eq=False)
class CountingPredicate(EmbeddedPredicate):
    """Leader-based evaluator of a semilinear spec under changing inputs.

    Every atom ``sum coeff*count(sym) (>= c | mod m == r)`` gets a signed
    token value per agent. An agent's *registered* weight is the
    coefficient of the pair it has currently paid in; the invariant is that
    values sum to registered weights (mod m for congruences). Leaders merge
    by the usual two-leaders rule, and a leader absorbs values from whoever
    it meets, saturating threshold values at ``+-bound``. The leader
    evaluates the spec on its values and hands the verdict to the agent it
    meets; ``frozen`` is the last verdict an agent received.

    When an input changes, the agent re-registers by adding
    ``new weight - old weight`` to its own value, deferring the update
    while that would leave the representable range. Pending changes only
    stay blocked while the leader is saturated in the same direction, which
    already decides the atom.

    State: ``(pair, leader, out, values, registered)``.
    """

    spec: PredicateSpec
    alphabet: tuple[str, ...] = BINARY_PAIRS
    name: str = "count"
    uniform = True

    def __post_init__(self):
        unknown = self.spec.symbols() - set(self.alphabet)
        if unknown:
            raise SpecError(f"spec mentions symbols outside the pair alphabet: {sorted(unknown)}")
        self._atoms = self.spec.atoms()
        counters = []
        for atom in self._atoms:
            weights = dict(atom.coeffs)
            if isinstance(atom, Congruence):
                if atom.modulus > MAX_RANGE:
                    raise SpecError(f"modulus {atom.modulus} exceeds {MAX_RANGE}")
                counters.append(_AtomCounter(weights, 0, atom.modulus, atom.residue))
            else:
                wmax = max((abs(c) for c in weights.values()), default=0)
                bound = max(abs(atom.const) + 1, 2 * wmax, 1)
                if bound > MAX_RANGE:
                    raise SpecError(f"threshold atom {atom} needs range {bound} > {MAX_RANGE}")
                counters.append(_AtomCounter(weights, bound, 0, atom.const))
        self._counters = tuple(counters)

    def initial(self, pair):
        ws = tuple(c.w(pair) for c in self._counters)
        return (pair, 1, 0, ws, ws)

    def _register(self, q):
        pair, leader, out, vals, regs = q
        new_vals, new_regs = list(vals), list(regs)
        for k, c in enumerate(self._counters):
            want = c.w(pair)
            if regs[k] != want:
                nv = c.shift(vals[k], regs[k], want)
                if nv is not None:
                    new_vals[k], new_regs[k] = nv, want
        return (pair, leader, out, tuple(new_vals), tuple(new_regs))

    def verdict(self, vals) -> int:
        truth = {a: c.holds(v) for a, c, v in zip(self._atoms, self._counters, vals)}
        return int(self.spec.from_atoms(truth))

    def delta(self, q1, q2):
        q1, q2 = self._register(q1), self._register(q2)
        if not (q1[1] or q2[1]):
            return q1, q2
        # the leader side absorbs; with two leaders the initiator survives
        lead, other = (q1, q2) if q1[1] else (q2, q1)
        kept, rest = [], []
        for c, u, v in zip(self._counters, lead[3], other[3]):
            a, b = c.combine(u, v)
            kept.append(a)
            rest.append(b)
        out = self.verdict(kept)
        new_lead = (lead[0], 1, out, tuple(kept), lead[4])
        new_other = (other[0], 0, out, tuple(rest), other[4])
        return (new_lead, new_other) if q1[1] else (new_other, new_lead)

    def frozen(self, q):
        return q[2]

    def on_input_change(self, q, pair):
        return self._register((pair,) + q[1:])

    def state_name(self, q):
        pair, leader, out, vals, regs = q
        v = "_".join(map(str, vals))
        r = "_".join(map(str, regs))
        return f"{pair}.L{leader}.o{out}.v{v}.r{r}"


def counting_predicate(spec: PredicateSpec, alphabet: Sequence[str] | None = None,
                       name: str = "count") -> CountingPredicate:
    alphabet = tuple(alphabet) if alphabet is not None else (spec.alphabet or BINARY_PAIRS)
    return CountingPredicate(spec, alphabet, name)


# -- contract certification


@dataclass
class ContractFailure:
    input: Bag
    reason: str
    path: list[Configuration] = field(default_factory=list)

    def describe(self) -> str:
        return f"{format_bag(self.input)}: {self.reason}"


@dataclass
class ContractVerdict:
    embedded: str
    n: int
    checked: int
    failures: list[ContractFailure]

    @property
    def passed(self) -> bool:
        return not self.failures


def _terminal_ok(ep: EmbeddedPredicate, graph: ConfigGraph, truth: bool) -> int | None:
    """First terminal node violating the contract, or None."""
    for v in graph.terminal_nodes():
        bits = [ep.frozen(q) for q, n in graph.counts(v).items() for _ in range(n)]
        if ep.uniform:
            ok = all(b == int(truth) for b in bits)
        else:
            ok = all(bits) == truth
        if not ok:
            return v
    return None


def _pairs_of(ep: EmbeddedPredicate, counts: dict) -> dict:
    out: dict = {}
    for q, n in counts.items():
        p = ep.pair_of(q)
        out[p] = out.get(p, 0) + n
    return out


def contract_check(ep: EmbeddedPredicate, n: int, cap: int = DEFAULT_CAP,
                   input_changes: bool = False) -> ContractVerdict:
    """Certify the stabilizing-input contract for every pair multiset of size ``n``.

    With ``input_changes`` the check also restarts from every reachable
    configuration after one agent's pair is replaced, which exercises the
    re-stabilization path.
    """
    if n < 2:
        raise ValueError("the contract is stated for n >= 2")
    proto = ep.as_protocol()
    failures: list[ContractFailure] = []
    good: set = set()
    checked = 0

    def certify(start: Configuration, origin: Bag) -> ConfigGraph | None:
        nonlocal checked
        graph = explore(proto, start, cap)
        checked += 1
        truth = ep.spec(_pairs_of(ep, graph.counts(0)))
        bad = _terminal_ok(ep, graph, truth)
        if bad is not None:
            failures.append(ContractFailure(
                origin, f"terminal configuration disagrees with spec value {int(truth)}",
                [graph.config(v) for v in _path_nodes(graph, bad)]))
            return None
        good.update(graph.nodes)
        return graph

    for x in all_inputs(ep.alphabet, n):
        try:
            graph = certify(init_config(proto, dict(x)), x)
        except ExplorationCapExceeded as e:
            failures.append(ContractFailure(x, str(e)))
            continue
        if graph is None or not input_changes:
            continue
        for v in range(len(graph)):
            counts = graph.counts(v)
            for q in counts:
                for p in ep.alphabet:
                    if p == ep.pair_of(q):
                        continue
                    changed = dict(graph.config(v).items)
                    i = proto.state_id(q)
                    changed[i] -= 1
                    j = proto.state_id(ep.on_input_change(q, p))
                    changed[j] = changed.get(j, 0) + 1
                    start = Configuration.from_counts(changed)
                    if start.items in good:
                        continue
                    certify(start, bag(_pairs_of(ep, dict(
                        (proto.label(k), c) for k, c in start.items))))
                    if len(failures) > 20:
                        return ContractVerdict(ep.name, n, checked, failures)
    return ContractVerdict(ep.name, n, checked, failures)


def _path_nodes(graph: ConfigGraph, node: int) -> list[int]:
    path = [node]
    while graph.parent[path[-1]] is not None:
        path.append(graph.parent[path[-1]][0])
    return list(reversed(path))
