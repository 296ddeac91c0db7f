import networkx as nx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popproto.analysis import (
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
    reachability_oracle,
    reachable_multisets,
    reachable_pair_set,
    stable_outputs,
    tag_inputs,
    tarjan_scc,
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
    reachability_freezer,
    single_valued_composite,
    single_valued_spec,
)
from popproto.core import Protocol, bag, init_config
from popproto.predicates import local_conjunction
from popproto.semilinear import parse_spec

Z = lambda *items: bag(dict(items))  # noqa: E731


def test_explore_leader_election():
    p = leader_election()
    g = explore(p, init_config(p, {"x": 3}))
    assert sorted(tuple(sorted(g.counts(v).items())) for v in range(len(g))) == [
        (("F", 1), ("L", 2)), (("F", 2), ("L", 1)), (("L", 3),)]
    terminal = [g.counts(v) for v in g.terminal_nodes()]
    assert terminal == [{"L": 1, "F": 2}]


def test_explore_noop_single_terminal_node():
    p = noop()
    g = explore(p, init_config(p, {"0": 2, "1": 2}))
    assert len(g) == 1 and g.num_edges() == 0 and g.terminal == {g.scc[0]}


def test_explore_doubling_max_tokens():
    g = doubling_graph(1, 3)
    assert max(g.counts(v).get("c", 0) + g.counts(v).get("d", 0) for v in range(len(g))) == 4


def test_explore_cap():
    p = doubling()
    with pytest.raises(ExplorationCapExceeded, match="unexplored"):
        explore(p, init_config(p, {"1": 1, "a": 3, "c": 1, "b": 15}), cap=10)


def test_terminal_components_are_closed_and_others_are_not():
    p = tag_inputs(compose_algorithm1(local_conjunction(lambda x, y: x == y)))
    g = explore(p, init_config(p, {"0": 1, "1": 2}))
    assert len(g.components) > 1
    for c, members in enumerate(g.components):
        leaves = any(g.scc[t] != c for v in members for t, _, _ in g.succ[v])
        assert leaves == (c not in g.terminal)


def test_stable_outputs_leader_election():
    rep = stable_outputs(leader_election(), {"x": 3})
    assert rep.output_stable_protocol
    assert rep.projected() == {(("1", 3),)}


def test_stable_outputs_algorithm1_identity():
    rep = stable_outputs(compose_algorithm1(local_conjunction(lambda x, y: x == y)), {"0": 1, "1": 2})
    assert rep.output_stable_protocol
    assert rep.stable_outputs == {Z((("0", "0"), 1), (("1", "1"), 2))}


def test_stable_outputs_freezer_epidemic():
    rep = stable_outputs(reachability_freezer(epidemic()), {"i": 1, "s": 2})
    assert rep.output_stable_protocol
    assert rep.projected() == {bag({"i": 1, "s": 2}), bag({"i": 2, "s": 1}), bag({"i": 3})}


def test_stable_output_witness_replays():
    from popproto.core import MaxSteps, ScriptedScheduler, run
    p = compose_algorithm1(local_conjunction(lambda x, y: x == y))
    rep = stable_outputs(p, {"0": 2, "1": 1})
    (z, script), = rep.witnesses.items()
    ex = run(p, {"0": 2, "1": 1}, ScriptedScheduler(tuple(script)), MaxSteps(10**6))
    assert ex.output() == bag({"0": 2, "1": 1})


def test_verify_relation_algorithm1_identity():
    p = compose_algorithm1(local_conjunction(lambda x, y: x == y))
    for n in (3, 4):
        assert verify_relation(p, identity_relation(), all_inputs("01", n)).passed


def test_verify_relation_wrong_oracle_fails_with_extra_output():
    p = compose_algorithm1(local_conjunction(lambda x, y: x == y))
    wrong = RelationOracle(lambda z: all(x != y for (x, y), _ in z), "all differ")
    rep = verify_relation(p, wrong, all_inputs("01", 3))
    assert not rep.passed
    v = rep.failures()[0]
    assert v.status == "FAIL" and v.extra and v.missing
    assert v.record()["extra_witness"]


def test_verify_relation_reports_cap_per_input():
    p = compose_algorithm1(local_conjunction(lambda x, y: x == y))
    rep = verify_relation(p, identity_relation(), all_inputs("01", 3), cap=30)
    assert [v.status for v in rep.verdicts] == ["PASS", "CAP", "CAP", "PASS"]


def test_verify_relation_freezer_against_bfs():
    for P in (noop(), epidemic()):
        f = reachability_freezer(P)
        for n in (3, 4, 5):
            assert verify_relation(f, reachability_oracle(P), all_inputs(P.input_alphabet, n)).passed


def test_verify_predicate_single_valued():
    p = single_valued_composite(identity())
    rep = stable_outputs(p, {"(0|0)": 1, "(1|1)": 1})
    assert rep.projected() == {(("1", 2),)}
    rep = stable_outputs(p, {"(0|1)": 1, "(1|1)": 1})
    assert rep.projected() == {(("0", 2),)}


def test_verify_predicate_constant_true():
    p = Protocol("yes", {"a": "a", "b": "b"}, lambda q: "1", None)
    assert verify_predicate(p, parse_spec("true"), all_inputs("ab", 3)).passed
    assert not verify_predicate(p, parse_spec("false"), all_inputs("ab", 3)).passed


def test_verify_predicate_rejects_non_boolean_outputs():
    with pytest.raises(Exception, match="output only"):
        verify_predicate(epidemic(), parse_spec("true"), all_inputs("is", 2))


def test_check_invariant_leader_bits():
    p = compose_algorithm1(local_conjunction(lambda x, y: x == y))
    for n in (3, 4, 5):
        for x in all_inputs("01", n):
            g = explore(p, init_config(p, dict(x)))
            assert check_invariant(g, lambda c: sum(n for q, n in c.items() if q[2]) >= 1)


def test_check_invariant_counterexample_is_shortest_path():
    p = leader_election()
    g = explore(p, init_config(p, {"x": 4}))
    res = check_invariant(g, lambda c: c.get("L", 0) >= 3)
    assert not res
    assert [c.named(p) for c in res.counterexample] == [{"L": 4}, {"L": 3, "F": 1}, {"L": 2, "F": 2}]


def test_check_edge_invariant_doubling():
    g = doubling_graph(2, 7)
    cd = lambda c: c.get("c", 0) + c.get("d", 0)  # noqa: E731
    assert check_edge_invariant(g, lambda a, b: doubling_f(b) <= doubling_f(a))
    assert check_edge_invariant(g, lambda a, b: cd(b) >= cd(a))
    assert check_invariant(g, lambda c: sum(c.get(q, 0) for q in "1234") == 1)
    res = check_edge_invariant(g, lambda a, b: doubling_f(b) >= doubling_f(a))
    assert not res  # the potential really does drop on some edges


def test_doubling_f_examples():
    assert doubling_f({"1": 1, "a": 2, "c": 1}) == 8
    assert doubling_f({"1": 1, "c": 1}) == 2
    assert doubling_f({"2": 1, "d": 1}) == 2
    with pytest.raises(ValueError):
        doubling_f({"1": 1, "2": 1})


@pytest.mark.parametrize("k,blanks,top", [(0, 1, 2), (1, 3, 4), (2, 7, 8), (3, 15, 16)])
def test_reachable_pair_set(k, blanks, top):
    assert reachable_pair_set(k, blanks) == {(ell, k) for ell in range(1, top + 1)}


def test_reachable_pair_set_needs_blanks():
    with pytest.raises(ValueError):
        reachable_pair_set(2, 6)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_equality_path(k):
    g = doubling_graph(k, 2 ** (k + 1) - 1)
    path = equality_path(g)
    end = g.counts(path[-1])
    assert end.get("c", 0) + end.get("d", 0) == 2 ** (k + 1)
    assert {doubling_f(g.counts(v)) for v in path} == {2 ** (k + 1)}


def test_reachable_multisets_epidemic():
    assert reachable_multisets(epidemic(), bag({"i": 1, "s": 2})) == {
        bag({"i": 1, "s": 2}), bag({"i": 2, "s": 1}), bag({"i": 3})}


def test_reachability_oracle_is_agent_wise():
    o = reachability_oracle(epidemic())
    assert o(Z((("i", "i"), 1), (("s", "i"), 1), (("s", "s"), 1)))
    assert not o(Z((("i", "s"), 1), (("s", "i"), 2)))


def test_graph_records():
    p = leader_election()
    g = explore(p, init_config(p, {"x": 2}))
    recs = list(graph_records(g))
    assert recs[0] == {"node": 0, "counts": {"L": 2}, "scc": g.scc[0], "terminal": False}
    assert recs[-1] == {"edge": [0, 1], "initiator": "L", "responder": "L"}


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12).flatmap(
    lambda n: st.lists(st.lists(st.integers(0, n - 1), max_size=4), min_size=n, max_size=n)))
def test_tarjan_matches_networkx(adj):
    n = len(adj)
    scc, comps = tarjan_scc(n, adj)
    g = nx.DiGraph()
    g.add_nodes_from(range(n))
    g.add_edges_from((v, w) for v, ws in enumerate(adj) for w in ws)
    assert sorted(map(sorted, comps)) == sorted(map(sorted, nx.strongly_connected_components(g)))
    for c, members in enumerate(comps):
        assert all(scc[v] == c for v in members)
    # reverse topological order: edges only go to the same or an earlier component
    assert all(scc[w] <= scc[v] for v, ws in enumerate(adj) for w in ws)
