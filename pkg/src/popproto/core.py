"""Protocols, configurations and single-step semantics.

Agents are anonymous and the interaction graph is complete, so a
configuration is stored as a multiset of states (a sparse count vector)
rather than as a vector indexed by agent.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Iterator, Mapping, NamedTuple, Sequence, Union

Bag = tuple  # canonical multiset: sorted tuple of (symbol, count), counts > 0


class ProtocolError(ValueError):
    """Malformed protocol, input or configuration."""


class DisabledTransition(ProtocolError):
    pass


def bag(items: Mapping | Iterable) -> Bag:
    """Canonical multiset from a mapping of counts or an iterable of symbols."""
    counter = Counter(dict(items)) if isinstance(items, Mapping) else Counter(items)
    for sym, n in counter.items():
        if n < 0:
            raise ProtocolError(f"negative count {n} for {sym!r}")
    return tuple(sorted((k, v) for k, v in counter.items() if v > 0))


def to_bag(x: Bag | Mapping | Iterable) -> Bag:
    """Accept a canonical bag (tuple), a mapping of counts or a list of symbols."""
    if isinstance(x, tuple):
        return x
    return bag(x)


def bag_size(b: Bag) -> int:
    return sum(n for _, n in b)


def bag_elements(b: Bag) -> list:
    out = []
    for sym, n in b:
        out.extend([sym] * n)
    return out


def format_bag(b: Bag) -> str:
    def fmt(sym):
        if isinstance(sym, tuple):
            return "(" + "|".join(str(s) for s in sym) + ")"
        return str(sym)
    return "{" + ", ".join(f"{fmt(s)}:{n}" for s, n in b) + "}"


class StateId(NamedTuple):
    id: int
    name: str


class Transition(NamedTuple):
    initiator: int
    responder: int
    result: tuple[int, int]

    @property
    def is_noop(self) -> bool:
        return self.result == (self.initiator, self.responder)


class Protocol:
    """A population protocol over hashable state labels.

    ``transition`` is either a mapping from ordered label pairs to label
    pairs (missing pairs are no-ops) or a function computing the same.
    States are interned to small integer ids on first sight, so protocols
    built from a function only materialize the states that are actually
    encountered; :meth:`close` forces the full closure.
    """

    def __init__(
        self,
        name: str,
        input_map: Mapping[str, Hashable],
        output: Mapping[Hashable, Hashable] | Callable[[Hashable], Hashable],
        transition: Mapping[tuple, tuple] | Callable[[Hashable, Hashable], tuple] | None = None,
        *,
        states: Iterable[Hashable] = (),
        output_alphabet: Sequence[Hashable] | None = None,
        state_name: Callable[[Hashable], str] = str,
        closed: bool = False,
    ):
        if not input_map:
            raise ProtocolError("input map must not be empty")
        self.name = name
        self._state_name = state_name
        self._labels: list = []
        self._ids: dict = {}
        self._names: dict[str, int] = {}
        self._delta: dict[tuple[int, int], tuple[int, int]] = {}
        self._out: list = []
        if isinstance(transition, Mapping):
            table = dict(transition)
            self._step = lambda p, q: table.get((p, q), (p, q))
            self._table = table
        elif transition is None:
            self._step = lambda p, q: (p, q)
            self._table = {}
        else:
            self._step = transition
            self._table = None
        if isinstance(output, Mapping):
            omap = dict(output)

            def out_fn(label):
                try:
                    return omap[label]
                except KeyError:
                    raise ProtocolError(f"output map is not defined on state {state_name(label)!r}") from None
            self._output_fn = out_fn
        else:
            self._output_fn = output
        for label in states:
            self.state_id(label)
        self._input = {sym: self.state_id(label) for sym, label in input_map.items()}
        self.input_alphabet = tuple(input_map)
        self._closed = closed
        if closed:
            # declared state tables must already be closed under delta
            self._declared = len(self._labels)
        if output_alphabet is None:
            seen = []
            for i in range(len(self._labels)):
                o = self.output_of(i)
                if o not in seen:
                    seen.append(o)
            output_alphabet = seen
        self.output_alphabet = tuple(output_alphabet)

    def __repr__(self) -> str:
        return f"Protocol({self.name!r}, states={len(self._labels)})"

    # -- states

    def state_id(self, label: Hashable) -> int:
        i = self._ids.get(label)
        if i is not None:
            return i
        if getattr(self, "_closed", False):
            raise ProtocolError(f"state {self._state_name(label)!r} is not declared")
        name = self._state_name(label)
        if not name or any(c.isspace() for c in name) or "," in name or "#" in name or "->" in name:
            raise ProtocolError(f"invalid state name {name!r}")
        if name in self._names:
            raise ProtocolError(f"duplicate state name {name!r}")
        i = len(self._labels)
        self._labels.append(label)
        self._ids[label] = i
        self._names[name] = i
        self._out.append(None)
        return i

    def label(self, i: int) -> Hashable:
        return self._labels[i]

    def name_of(self, i: int) -> str:
        return self._state_name(self._labels[i])

    def id_of_name(self, name: str) -> int:
        try:
            return self._names[name]
        except KeyError:
            raise ProtocolError(f"unknown state {name!r}") from None

    @property
    def num_known_states(self) -> int:
        return len(self._labels)

    def close(self, limit: int = 200_000) -> list[StateId]:
        """Intern every state reachable from the input states by pairwise steps."""
        ids = sorted(set(self._input.values()))
        frontier = list(ids)
        known = set(ids)
        order = list(ids)
        while frontier:
            new = []
            for i in frontier:
                for j in order + new:
                    for a, b in ((i, j), (j, i)):
                        for r in self.delta(a, b):
                            if r not in known:
                                known.add(r)
                                new.append(r)
                                if len(known) > limit:
                                    raise ProtocolError(
                                        f"state closure of {self.name!r} exceeds {limit} states")
            order.extend(new)
            frontier = new
        # keep declared-but-unreachable states too; they belong to the table
        return [StateId(i, self.name_of(i)) for i in range(len(self._labels))]

    @property
    def states(self) -> list[StateId]:
        return self.close()

    # -- maps

    def input_state(self, symbol: str) -> int:
        try:
            return self._input[symbol]
        except KeyError:
            raise ProtocolError(f"unknown input symbol {symbol!r}") from None

    @property
    def input_map(self) -> dict[str, int]:
        return dict(self._input)

    def output_of(self, i: int) -> Hashable:
        o = self._out[i]
        if o is None:
            o = self._output_fn(self._labels[i])
            self._out[i] = o
        return o

    def delta(self, i: int, j: int) -> tuple[int, int]:
        key = (i, j)
        r = self._delta.get(key)
        if r is None:
            a, b = self._step(self._labels[i], self._labels[j])
            r = (self.state_id(a), self.state_id(b))
            self._delta[key] = r
        return r

    def rules(self) -> list[tuple[int, int, int, int]]:
        """Non-no-op rules over the closed state set, sorted by state id."""
        states = self.close()
        out = []
        if self._table is not None:
            pairs = sorted((self._ids[p], self._ids[q]) for p, q in self._table)
        else:
            pairs = [(i.id, j.id) for i in states for j in states]
        for i, j in pairs:
            r = self.delta(i, j)
            if r != (i, j):
                out.append((i, j, r[0], r[1]))
        return out


@dataclass(frozen=True)
class Configuration:
    """Sparse count vector: sorted ``(state id, count)`` pairs with positive counts."""

    items: tuple[tuple[int, int], ...]

    @classmethod
    def from_counts(cls, counts: Mapping[int, int]) -> "Configuration":
        items = tuple(sorted((i, n) for i, n in counts.items() if n))
        if any(n < 0 for _, n in items):
            raise ProtocolError("negative count in configuration")
        if not items:
            raise ProtocolError("configuration must contain at least one agent")
        return cls(items)

    @property
    def size(self) -> int:
        return sum(n for _, n in self.items)

    def count(self, i: int) -> int:
        for j, n in self.items:
            if j == i:
                return n
        return 0

    def as_dict(self) -> dict[int, int]:
        return dict(self.items)

    def vector(self, num_states: int) -> list[int]:
        v = [0] * num_states
        for i, n in self.items:
            v[i] = n
        return v

    def named(self, protocol: Protocol) -> dict[str, int]:
        return {protocol.name_of(i): n for i, n in self.items}

    def labels(self, protocol: Protocol) -> Iterator[tuple[Hashable, int]]:
        for i, n in self.items:
            yield protocol.label(i), n


def _symbols(input: Mapping[str, int] | Iterable[str]) -> list[tuple[str, int]]:
    if isinstance(input, tuple):
        return list(input)
    if isinstance(input, Mapping):
        return [(s, n) for s, n in input.items()]
    return list(Counter(input).items())


def init_config(protocol: Protocol, input: Mapping[str, int] | Iterable[str]) -> Configuration:
    counts: Counter = Counter()
    for sym, n in _symbols(input):
        if n < 0:
            raise ProtocolError(f"negative count for input symbol {sym!r}")
        counts[protocol.input_state(sym)] += n
    if sum(counts.values()) < 1:
        raise ProtocolError("input must contain at least one agent")
    return Configuration.from_counts(counts)


def is_enabled(config: Configuration, i: int, j: int) -> bool:
    if i == j:
        return config.count(i) >= 2
    return config.count(i) >= 1 and config.count(j) >= 1


def step_items(items: tuple, i: int, j: int, a: int, b: int) -> tuple:
    """Successor of a sparse count tuple; no enabledness check."""
    d = dict(items)
    d[i] -= 1
    d[j] -= 1
    d[a] = d.get(a, 0) + 1
    d[b] = d.get(b, 0) + 1
    return tuple(sorted((k, v) for k, v in d.items() if v))


def apply(protocol: Protocol, config: Configuration, t: Transition) -> Configuration:
    i, j = t.initiator, t.responder
    if i == j and config.count(i) < 2:
        raise DisabledTransition(
            f"transition ({protocol.name_of(i)}, {protocol.name_of(j)}) needs 2 agents in "
            f"{protocol.name_of(i)!r}, found {config.count(i)}")
    for s in (i, j):
        if config.count(s) < 1:
            raise DisabledTransition(
                f"transition ({protocol.name_of(i)}, {protocol.name_of(j)}) needs an agent in "
                f"{protocol.name_of(s)!r}, found 0")
    a, b = protocol.delta(i, j)
    if (a, b) != tuple(t.result):
        raise ProtocolError("transition result disagrees with the protocol's delta")
    if (a, b) == (i, j):
        return config
    return Configuration(step_items(config.items, i, j, a, b))


def enabled_transitions(protocol: Protocol, config: Configuration) -> list[Transition]:
    out = []
    for i, ni in config.items:
        for j, nj in config.items:
            if i == j and ni < 2:
                continue
            out.append(Transition(i, j, protocol.delta(i, j)))
    return out


def output(protocol: Protocol, config: Configuration) -> Bag:
    counts: Counter = Counter()
    for i, n in config.items:
        counts[protocol.output_of(i)] += n
    return bag(counts)


# -- scheduling


@dataclass(frozen=True)
class RandomScheduler:
    """Picks a uniformly random ordered pair of distinct agents."""

    seed: int = 0


@dataclass(frozen=True)
class ScriptedScheduler:
    """Replays ``(initiator, responder)`` state pairs, given by id or name."""

    steps: tuple


@dataclass(frozen=True)
class MaxSteps:
    steps: int


@dataclass(frozen=True)
class ConvergenceWindow:
    """Stop once the output has not changed for ``window`` steps (default 1000 n)."""

    window: int | None = None
    max_steps: int = 10_000_000


@dataclass(frozen=True)
class OracleStable:
    """Stop when ``is_stable(config)`` holds; built by :func:`popproto.analysis.oracle_stop`."""

    is_stable: Callable[[Configuration], bool] = field(compare=False)
    max_steps: int = 10_000_000


StopPolicy = Union[MaxSteps, ConvergenceWindow, OracleStable]
SchedulerSpec = Union[RandomScheduler, ScriptedScheduler]


@dataclass(frozen=True)
class Execution:
    protocol: Protocol = field(compare=False, repr=False)
    initial: Configuration
    steps: tuple[Transition, ...]
    seed: int | None
    final: Configuration
    stopped: str = "exhausted"

    def output(self) -> Bag:
        return output(self.protocol, self.final)

    def records(self) -> Iterator[dict]:
        for k, t in enumerate(self.steps):
            yield {
                "step": k,
                "initiator": self.protocol.name_of(t.initiator),
                "responder": self.protocol.name_of(t.responder),
            }


def _pick_pair(rng: random.Random, config: Configuration) -> tuple[int, int]:
    n = config.size
    a = rng.randrange(n)
    b = rng.randrange(n - 1)
    if b >= a:
        b += 1
    return _agent_state(config, a), _agent_state(config, b)


def _agent_state(config: Configuration, k: int) -> int:
    for i, c in config.items:
        if k < c:
            return i
        k -= c
    raise AssertionError("agent index out of range")


def _resolve(protocol: Protocol, s) -> int:
    return s if isinstance(s, int) else protocol.id_of_name(s)


def run(
    protocol: Protocol,
    input: Mapping[str, int] | Iterable[str],
    scheduler: SchedulerSpec,
    stop: StopPolicy,
) -> Execution:
    config = init_config(protocol, input)
    initial = config
    n = config.size
    steps: list[Transition] = []
    seed = scheduler.seed if isinstance(scheduler, RandomScheduler) else None

    if isinstance(stop, MaxSteps):
        limit = stop.steps
    else:
        limit = stop.max_steps
    window = None
    if isinstance(stop, ConvergenceWindow):
        window = stop.window if stop.window is not None else 1000 * n

    def done(k: int, last_change: int) -> str | None:
        if isinstance(stop, OracleStable) and stop.is_stable(config):
            return "stable"
        if window is not None and k - last_change >= window:
            return "converged"
        if k >= limit:
            return "max-steps"
        return None

    if n == 1:
        # a single agent never interacts
        return Execution(protocol, initial, (), seed, config, "single-agent")

    if isinstance(scheduler, ScriptedScheduler):
        script = iter(scheduler.steps)
        rng = None
    else:
        script = None
        rng = random.Random(scheduler.seed)

    last_out = output(protocol, config)
    last_change = 0
    k = 0
    reason = done(k, last_change)
    while reason is None:
        if script is not None:
            try:
                i, j = next(script)
            except StopIteration:
                reason = "exhausted"
                break
            i, j = _resolve(protocol, i), _resolve(protocol, j)
            t = Transition(i, j, protocol.delta(i, j))
            try:
                config = apply(protocol, config, t)
            except DisabledTransition as e:
                raise DisabledTransition(f"step {k}: {e}") from None
        else:
            i, j = _pick_pair(rng, config)
            t = Transition(i, j, protocol.delta(i, j))
            config = apply(protocol, config, t)
        steps.append(t)
        k += 1
        if window is not None:
            out = output(protocol, config)
            if out != last_out:
                last_out = out
                last_change = k
        reason = done(k, last_change)
    return Execution(protocol, initial, tuple(steps), seed, config, reason)


def replay(protocol: Protocol, execution: Execution) -> Configuration:
    config = execution.initial
    for t in execution.steps:
        config = apply(protocol, config, t)
    return config
