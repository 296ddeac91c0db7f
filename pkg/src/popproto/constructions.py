"""Builders for the protocols studied here, as ordinary :class:`Protocol` values.

State names are mechanical, dot-joined field encodings so every product
protocol can be written out and read back through :mod:`popproto.dsl`.
"""

from __future__ import annotations

import itertools
from typing import Sequence

from popproto.analysis import RelationOracle, all_inputs, zipped_candidates
from popproto.core import Bag, Protocol, ProtocolError, bag
from popproto.predicates import EmbeddedPredicate, counting_predicate
from popproto.semilinear import PredicateSpec, pair_symbol, split_pair, threshold, Not

# -- small base protocols


def leader_election() -> Protocol:
    return Protocol(
        "leader_election",
        {"x": "L"},
        {"L": "1", "F": "1"},
        {("L", "L"): ("L", "F")},
        states=["L", "F"],
        output_alphabet=["1"],
        closed=True,
    )


def noop(states: Sequence[str] = ("0", "1"), name: str = "noop") -> Protocol:
    """Every interaction is a no-op; inputs and outputs are the states themselves."""
    return Protocol(name, {s: s for s in states}, {s: s for s in states}, {},
                    states=states, output_alphabet=states, closed=True)


def identity(alphabet: Sequence[str] = ("0", "1")) -> Protocol:
    """Stably computes the single-valued relation y = x."""
    return noop(alphabet, "identity")


def epidemic() -> Protocol:
    """One-way epidemic: an infected initiator infects a susceptible responder."""
    return Protocol("epidemic", {"i": "i", "s": "s"}, {"i": "i", "s": "s"},
                    {("i", "s"): ("i", "i")}, states=["i", "s"], output_alphabet=["i", "s"],
                    closed=True)


def toggle() -> Protocol:
    """Two agents holding the same bit flip it together."""
    return Protocol("toggle", {"0": "0", "1": "1"}, {"0": "0", "1": "1"},
                    {("0", "0"): ("1", "1"), ("1", "1"): ("0", "0")},
                    states=["0", "1"], output_alphabet=["0", "1"], closed=True)


def doubling() -> Protocol:
    """Controller in states 1-4 doubling c/d tokens, drawing on b blanks.

    Inputs are the state names themselves; the output is the state.
    """
    states = ["1", "2", "3", "4", "a", "b", "c", "d"]
    rules = {
        ("1", "c"): ("2", "d"),
        ("2", "b"): ("1", "d"),
        ("1", "a"): ("3", "b"),
        ("3", "d"): ("4", "c"),
        ("4", "b"): ("3", "c"),
        ("3", "a"): ("1", "b"),
    }
    return Protocol("doubling", {s: s for s in states}, {s: s for s in states}, rules,
                    states=states, output_alphabet=states, closed=True)


def rank_protocol(n0: int) -> Protocol:
    """The ranking rule k,k -> k,min(k+1,n0) on its own."""
    if n0 < 2:
        raise ProtocolError("n0 must be at least 2")
    return Protocol(
        f"rank{n0}",
        {"x": 0},
        lambda r: str(r),
        lambda p, q: (p, min(q + 1, n0)) if p == q else (p, q),
        state_name=lambda r: f"r{r}",
        output_alphabet=[str(r) for r in range(n0 + 1)],
    )


# -- relation from predicate


def compose_algorithm1(embedded: EmbeddedPredicate, X: Sequence[str] = ("0", "1"),
                       Y: Sequence[str] = ("0", "1")) -> Protocol:
    """Wander through candidate outputs until the embedded test locks them.

    Agent state is ``(x, y, leader, q)``. Cases on the leader bits of
    (initiator, responder):

    * 1,1: the responder drops its leader bit;
    * 1,0: the leader bit moves to the responder;
    * 0,1: an unfrozen responder advances ``y`` cyclically through ``Y``
      and its embedded state is told about the new pair;
    * 0,0: both embedded states take a step.
    """
    X, Y = tuple(X), tuple(Y)
    if not Y:
        raise ProtocolError("output alphabet must be non-empty")
    needed = {pair_symbol(x, y) for x in X for y in Y}
    if not needed <= set(embedded.alphabet):
        raise ProtocolError("embedded predicate does not cover every (x|y) pair")
    nxt = {y: Y[(k + 1) % len(Y)] for k, y in enumerate(Y)}

    def step(i, r):
        ix, iy, il, iq = i
        rx, ry, rl, rq = r
        if il and rl:
            return i, (rx, ry, 0, rq)
        if il:
            return (ix, iy, 0, iq), (rx, ry, 1, rq)
        if rl:
            if embedded.frozen(rq):
                return i, r
            y2 = nxt[ry]
            return i, (rx, y2, 1, embedded.on_input_change(rq, pair_symbol(rx, y2)))
        q1, q2 = embedded.delta(iq, rq)
        return (ix, iy, 0, q1), (rx, ry, 0, q2)

    y0 = Y[0]
    return Protocol(
        f"algorithm1[{embedded.name}]",
        {x: (x, y0, 1, embedded.initial(pair_symbol(x, y0))) for x in X},
        lambda s: s[1],
        step,
        state_name=lambda s: f"x{s[0]}.y{s[1]}.leader{s[2]}.{embedded.state_name(s[3])}",
        output_alphabet=Y,
    )


# -- reachability as a relation


def reachability_freezer(P: Protocol, project_output: bool = False) -> Protocol:
    """Simulate ``P`` and nondeterministically freeze it.

    State is ``(token, P state)`` with token ``a``, ``b`` or ``-``. Inputs
    are names of ``P`` states (a configuration of ``P``); every agent starts
    with token ``a``. The output is the ``P`` state name, so the computed
    relation is reachability between ``P`` configurations; with
    ``project_output`` it is passed through ``P``'s output map instead.
    """
    states = P.close()
    names = [s.name for s in states]

    def step(u, v):
        (t1, q1), (t2, q2) = u, v
        if t1 == "a" and t2 == "a":
            return u, ("b", q2)
        if t1 == "b" and t2 == "b":
            return u, ("-", q2)
        if t1 in "ab" and t2 == "-":
            return ("-", q1), (t1, q2)
        if t1 == "-" and t2 in "ab":
            return (t2, q1), ("-", q2)
        if t1 == "a" and t2 == "b":
            r1, r2 = P.delta(q1, q2)
            return ("a", r1), ("b", r2)
        if t1 == "b" and t2 == "a":
            return ("-", q1), ("-", q2)
        return u, v

    if project_output:
        out = lambda s: P.output_of(s[1])
        alphabet = P.output_alphabet
    else:
        out = lambda s: P.name_of(s[1])
        alphabet = names
    return Protocol(
        f"freezer[{P.name}]",
        {P.name_of(s.id): ("a", s.id) for s in states},
        out,
        step,
        states=[(t, s.id) for t in "ab-" for s in states],
        state_name=lambda s: f"{s[0]}.{P.name_of(s[1])}",
        output_alphabet=alphabet,
    )


# -- predicate from single-valued relation


def single_valued_composite(P: Protocol, name: str | None = None) -> Protocol:
    """Decide ``R(<x, y'>)`` for the single-valued relation ``P`` computes.

    Inputs are pair symbols ``(x|y')``. Each agent runs ``P`` on ``x`` and,
    on the same interaction, an embedded test of "no agent has
    P-output != y'" whose pair is ``(P-output|y')``; the test is told
    whenever the agent's ``P`` output changes. The composite outputs the
    test's frozen bit.
    """
    X, Y = P.input_alphabet, tuple(str(y) for y in P.output_alphabet)
    pairs = tuple(pair_symbol(o, y) for o in Y for y in Y)
    mismatched = [pair_symbol(o, y) for o in Y for y in Y if o != y]
    spec = PredicateSpec(Not(threshold({s: 1 for s in mismatched}, 1)), pairs,
                         "not (mismatches >= 1)")
    test = counting_predicate(spec, pairs, "eq")

    def step(u, v):
        (p1, y1, t1), (p2, y2, t2) = u, v
        r1, r2 = P.delta(p1, p2)
        t1, t2 = test.delta(t1, t2)
        o1, o2 = str(P.output_of(r1)), str(P.output_of(r2))
        if o1 != split_pair(test.pair_of(t1))[0]:
            t1 = test.on_input_change(t1, pair_symbol(o1, y1))
        if o2 != split_pair(test.pair_of(t2))[0]:
            t2 = test.on_input_change(t2, pair_symbol(o2, y2))
        return (r1, y1, t1), (r2, y2, t2)

    def start(x, y):
        p = P.input_state(x)
        return (p, y, test.initial(pair_symbol(str(P.output_of(p)), y)))

    return Protocol(
        name or f"single_valued[{P.name}]",
        {pair_symbol(x, y): start(x, y) for x in X for y in Y},
        lambda s: str(test.frozen(s[2])),
        step,
        state_name=lambda s: f"p{P.name_of(s[0])}.y{s[1]}.{test.state_name(s[2])}",
        output_alphabet=("0", "1"),
    )


def single_valued_spec(P: Protocol) -> PredicateSpec:
    """Ground truth for the composite over the identity protocol: y' = x everywhere."""
    X, Y = P.input_alphabet, [str(y) for y in P.output_alphabet]
    bad = [pair_symbol(x, y) for x in X for y in Y if x != y]
    return PredicateSpec(Not(threshold({s: 1 for s in bad}, 1)),
                         tuple(pair_symbol(x, y) for x in X for y in Y))


# -- small populations


def _small_outputs(X: Sequence[str], Y: Sequence[str], relation: RelationOracle,
                   n: int, xs: tuple[str, ...]) -> list[tuple[str, ...]]:
    """Output vectors indexed by rank for input vector ``xs``, one per zipped multiset.

    Representatives give agents sharing an input symbol their outputs in
    sorted order, which keeps the list deterministic.
    """
    x_bag = bag(xs)
    out = []
    for z in zipped_candidates(x_bag, Y):
        if not relation(z):
            continue
        ys_for = {x: sorted(y for (xx, y), k in z if xx == x for _ in range(k)) for x, _ in x_bag}
        taken = {x: 0 for x in ys_for}
        vec = []
        for x in xs:
            vec.append(ys_for[x][taken[x]])
            taken[x] += 1
        out.append(tuple(vec))
    return out


def small_output_count(Y: Sequence[str], n0: int) -> int:
    """Distinct output multisets over populations of size 1 .. n0-1."""
    return sum(len(all_inputs(Y, n)) for n in range(1, n0))


def rank_wrapper(P: Protocol, n0: int, small_relation: RelationOracle) -> Protocol:
    """Extend ``P`` (correct for n >= n0) to every population size.

    Per agent: ``rank`` in 0..n0 under the rule ``k,k -> k,min(k+1,n0)``;
    ``index`` and ``frozen`` (a rank-0 initiator that is not frozen bumps
    ``index`` mod m, a rank-0 responder freezes); the ``data`` array of
    what was last seen at every rank; the agent's own input; a ``P`` state
    stepped in parallel.

    Only ``data[0]`` needs the observed index and slots 1..n0-1 keep the
    observed input. ``data[n0]`` marks that ``n >= n0`` is known: it is set
    on seeing rank n0-1 or n0 (rank k needs k+1 agents) and spreads to
    whoever meets an agent that knows. From then on the other slots and
    the index can no longer influence the output, so they collapse to a
    fixed value. Likewise ``index`` and ``frozen`` are reset once an agent
    leaves rank 0.

    Output: while ``data[n0]`` is empty the agent rebuilds ``n`` and the
    input vector by rank from ``data``, takes the ``data[0].index mod |S|``-th
    element of ``S = {y : small_relation(x, y)}`` and emits its own
    coordinate; otherwise it emits its ``P`` output.
    """
    if n0 < 2:
        raise ProtocolError("n0 must be at least 2")
    X = P.input_alphabet
    Y = tuple(str(y) for y in P.output_alphabet)
    m = small_output_count(Y, n0)
    table: dict[tuple[str, ...], list[tuple[str, ...]]] = {}
    for n in range(1, n0):
        for xs in itertools.product(X, repeat=n):
            table[xs] = _small_outputs(X, Y, small_relation, n, xs)
            if n == 1 and len(table[xs]) != 1:
                raise ProtocolError(f"small relation must be single-valued for n = 1 (input {xs})")
            if not table[xs]:
                raise ProtocolError(f"small relation is not total on input {xs}")
            m = max(m, len(table[xs]))

    COLLAPSED = ("*",) * n0 + (True,)

    def seen(agent):
        rank, index, frozen, data, x, p = agent
        if rank == 0:
            return (x, index)
        if rank == n0:
            return True
        return x

    def record(data, rank, obs):
        if data[rank] == obs:
            return data
        return data[:rank] + (obs,) + data[rank + 1:]

    def step(u, v):
        ru, iu, fu, du, xu, pu = u
        rv, iv, fv, dv, xv, pv = v
        if ru == rv:
            rv = min(rv + 1, n0)
        if ru == 0 and not fu and du[n0] is None:
            iu = (iu + 1) % m
        if rv == 0:
            fv = 1
        pu, pv = P.delta(pu, pv)
        u = (ru, iu, fu, du, xu, pu)
        v = (rv, iv, fv, dv, xv, pv)
        du = record(record(du, ru, seen(u)), rv, seen(v))
        dv = record(record(dv, rv, seen(v)), ru, seen(u))
        u = (ru, iu, fu, du, xu, pu)
        v = (rv, iv, fv, dv, xv, pv)
        if large(du) or large(dv):
            return collapse(u), collapse(v)
        return settle(u), settle(v)

    def large(data):
        # rank k needs k+1 agents, so seeing rank n0-1 already proves n >= n0
        return data[n0] is not None or data[n0 - 1] is not None

    def collapse(agent):
        # from here on the output is P's and data/index/frozen are dead
        rank, index, frozen, data, x, p = agent
        return (rank, 0, 0, COLLAPSED, x, p)

    def settle(agent):
        # index and frozen only mean something at rank 0
        rank, index, frozen, data, x, p = agent
        return agent if rank == 0 else (rank, 0, 0, data, x, p)

    def out(agent):
        rank, index, frozen, data, x, p = agent
        if data[n0] is not None:
            return str(P.output_of(p))
        top = max(r for r in range(n0) if data[r] is not None)
        n = top + 1
        if n >= n0 or any(data[r] is None for r in range(n)):
            # n = n0 never fills data[n0]; P is already correct there
            return str(P.output_of(p))
        xs = (data[0][0],) + tuple(data[r] for r in range(1, n))
        S = table[xs]
        y = S[data[0][1] % len(S)]
        return y[rank] if rank < n else str(P.output_of(p))

    def name(agent):
        rank, index, frozen, data, x, p = agent
        slots = []
        for r, d in enumerate(data):
            if d is None:
                slots.append("_")
            elif d == "*":
                slots.append("-")
            elif r == 0:
                slots.append(f"{d[0]}:{d[1]}")
            elif r == n0:
                slots.append("*")
            else:
                slots.append(str(d))
        return f"r{rank}.i{index}.f{frozen}.d{'/'.join(slots)}.x{x}.p{P.name_of(p)}"

    def start(x):
        data = ((x, 0),) + (None,) * n0
        return (0, 0, 0, data, x, P.input_state(x))

    proto = Protocol(
        f"rank_wrapper[{P.name};n0={n0}]",
        {x: start(x) for x in X},
        out,
        step,
        state_name=name,
        output_alphabet=Y,
    )
    proto.index_modulus = m
    return proto
