"""Randomized properties over the constructions and the text format."""

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from popproto.analysis import identity_relation
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
    toggle,
)
from popproto.core import (
    DisabledTransition,
    MaxSteps,
    Protocol,
    RandomScheduler,
    Transition,
    apply,
    enabled_transitions,
    init_config,
    replay,
    run,
)
from popproto.dsl import parse, serialize, structurally_equal
from popproto.predicates import counting_predicate, local_conjunction
from popproto.semilinear import parse_spec

PROTOCOLS = [
    leader_election(), doubling(), noop(), identity(), epidemic(), toggle(), rank_protocol(3),
    reachability_freezer(epidemic()), reachability_freezer(toggle()),
    compose_algorithm1(local_conjunction(lambda x, y: x == y)),
    compose_algorithm1(counting_predicate(parse_spec("count((0|1)) + count((1|0)) == 0"))),
    single_valued_composite(identity()),
    rank_wrapper(identity(), 3, identity_relation()),
]

SLOW = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@st.composite
def population(draw, protocol, max_n=5):
    syms = protocol.input_alphabet
    n = draw(st.integers(1, max_n))
    picks = draw(st.lists(st.sampled_from(syms), min_size=n, max_size=n))
    counts = {}
    for s in picks:
        counts[s] = counts.get(s, 0) + 1
    return counts


@st.composite
def walk(draw):
    """A protocol, an input, and a few random transitions taken from the enabled list."""
    p = draw(st.sampled_from(PROTOCOLS))
    x = draw(population(p))
    choices = draw(st.lists(st.integers(0, 10**6), max_size=25))
    return p, x, choices


@SLOW
@given(walk())
def test_enabled_transitions_preserve_size_and_apply_cleanly(w):
    p, x, choices = w
    c = init_config(p, x)
    n = c.size
    for k in choices:
        ts = enabled_transitions(p, c)
        for t in ts:
            assert apply(p, c, t).size == n
        if not ts:
            break
        c = apply(p, c, ts[k % len(ts)])


@SLOW
@given(walk())
def test_unlisted_pairs_are_disabled(w):
    p, x, choices = w
    c = init_config(p, x)
    for k in choices:
        ts = enabled_transitions(p, c)
        if not ts:
            break
        c = apply(p, c, ts[k % len(ts)])
    listed = {(t.initiator, t.responder) for t in enabled_transitions(p, c)}
    present = [i for i, _ in c.items]
    # held states plus the input states, some of which may be absent
    ids = present + [p.input_state(s) for s in p.input_alphabet]
    for i in ids:
        for j in ids:
            t = Transition(i, j, p.delta(i, j))
            if (i, j) in listed:
                apply(p, c, t)
            else:
                with pytest.raises(DisabledTransition):
                    apply(p, c, t)


@SLOW
@given(st.sampled_from(PROTOCOLS).flatmap(lambda p: st.tuples(st.just(p), population(p))),
       st.integers(0, 2**32 - 1))
def test_seeded_runs_replay(px, seed):
    p, x = px
    a = run(p, x, RandomScheduler(seed), MaxSteps(60))
    b = run(p, x, RandomScheduler(seed), MaxSteps(60))
    assert a == b
    assert list(a.records()) == list(b.records())
    assert replay(p, a) == a.final
    assert a.final.size == sum(x.values())


NAMES = st.text(alphabet="abcxyzLF012()|._", min_size=1, max_size=4).filter(lambda s: "->" not in s)


@st.composite
def tables(draw):
    states = draw(st.lists(NAMES, min_size=1, max_size=5, unique=True))
    syms = draw(st.lists(NAMES, min_size=1, max_size=3, unique=True))
    inputs = {s: draw(st.sampled_from(states)) for s in syms}
    outputs = {q: draw(st.sampled_from(["0", "1", "y"])) for q in states}
    pairs = draw(st.lists(st.tuples(st.sampled_from(states), st.sampled_from(states)),
                          unique=True, max_size=12))
    delta = {k: (draw(st.sampled_from(states)), draw(st.sampled_from(states))) for k in pairs}
    return Protocol("gen", inputs, outputs, delta, states=states, closed=True)


@settings(max_examples=150, deadline=None)
@given(tables())
def test_text_round_trip(p):
    text = serialize(p)
    q = parse(text)
    assert structurally_equal(p, q)
    assert serialize(q) == text
