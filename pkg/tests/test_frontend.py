import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpcgraph import fixtures
from mpcgraph.frontend import (PUBLIC, Annotation, FrontendError, attach_reveals, assign_site_ids,
                               default_reveal_to, propagate_ownership, run_frontend)
from mpcgraph.ir import GraphBuilder

ALL = frozenset({0, 1})


def two_input_graph(op="add", second="input"):
    b = GraphBuilder()
    x = b.input("x", [3])
    y = b.input("y", [3]) if second == "input" else b.const(np.ones(3))
    z = b.op(op, x, y)
    b.output(z)
    return b.build(), z


def test_secret_plus_public_constant_keeps_owner():
    g, z = two_input_graph(second="const")
    out = propagate_ownership(g, {"secrets": {"x": [0]}})
    assert out.nodes[z].owner == frozenset({0})


def test_two_owners_meet_to_neither():
    g, z = two_input_graph()
    out = propagate_ownership(g, {"secrets": {"x": [0], "y": [1]}})
    assert out.nodes[z].owner == frozenset()


def test_zeros_like_is_public():
    b = GraphBuilder()
    x = b.input("x", [3])
    z = b.op("zeros_like", x)
    b.output(z)
    out = propagate_ownership(b.build(), {"secrets": {"x": [0]}})
    assert out.nodes[z].owner == ALL


def test_missing_annotation_names_input():
    g, _ = two_input_graph()
    with pytest.raises(FrontendError, match="'y'"):
        propagate_ownership(g, {"secrets": {"x": [0]}})


def test_annotation_json_and_patterns():
    ann = Annotation.from_json({"secrets": {"x": [0], "w*": [1]}, "public": ["mask"]})
    assert ann.lookup("w1") == frozenset({1})
    assert ann.lookup("mask") == PUBLIC
    assert ann.lookup("other") is None
    assert Annotation.from_json(ann.to_json()) == ann
    with pytest.raises(FrontendError, match="unknown parties"):
        Annotation.from_json({"secrets": {"x": [2]}})


def test_site_ids_and_reveals():
    g, _ = two_input_graph()
    out = run_frontend(g, {"secrets": {"x": [0], "y": [1]}})
    assert all(out.nodes[o].op == "reveal" for o in out.outputs)
    sites = [n.site_id for n in out.nodes.values()]
    assert len(set(sites)) == len(sites)
    assert {"input/0", "input/1", "add/2"} <= set(sites)
    assert attach_reveals(attach_reveals(g)) == attach_reveals(g)
    assert assign_site_ids(assign_site_ids(g)) == assign_site_ids(g)


def test_default_reveal_target():
    g, _ = two_input_graph()
    assert default_reveal_to(run_frontend(g, {"secrets": {"x": [1], "y": [0]}})) == 1
    assert default_reveal_to(run_frontend(g, {"public": ["x", "y"]})) == 0


def _graph_and_owners(seed):
    rng = np.random.default_rng(seed)
    fx = fixtures.random_graph(rng)
    return fx.graph, {k: frozenset(v) for k, v in fx.annotation["secrets"].items()}


owner_sets = st.sampled_from([frozenset({0}), frozenset({1}), ALL])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.data())
def test_adding_a_party_never_removes_downstream(seed, data):
    g, owners = _graph_and_owners(seed)
    owners = {k: data.draw(owner_sets) for k in owners}
    name = data.draw(st.sampled_from(sorted(owners)))
    grown = dict(owners)
    grown[name] = owners[name] | {data.draw(st.sampled_from([0, 1]))}
    a = propagate_ownership(g, Annotation(owners))
    b = propagate_ownership(g, Annotation(grown))
    for nid in g.nodes:
        assert a.nodes[nid].owner <= b.nodes[nid].owner


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_propagation_is_idempotent_and_total(seed):
    g, owners = _graph_and_owners(seed)
    once = propagate_ownership(g, Annotation(owners))
    assert all(n.owner is not None for n in once.nodes.values())
    assert propagate_ownership(once) == once
    assert propagate_ownership(once, Annotation(owners)) == once
