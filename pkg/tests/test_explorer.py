import json

import networkx as nx
import numpy as np
import pytest

from owleyes.errors import GraphValidationError
from owleyes.explorer import explore, load_app_graph
from oracles import bfs_distances


def graph_json(edges, start="A", extra=()):
    ids = sorted(set(edges) | {d for outs in edges.values() for d in outs} | {start} | set(extra))
    return json.dumps({
        "start": start,
        "screens": {s: {"screenshot": f"shots/{s}.png", "hierarchy": None} for s in ids},
        "edges": {s: [{"action": f"tap_{d}", "to": d} for d in outs] for s, outs in edges.items()},
    })


# Hand-traced fixtures: (edges, start, budget, bfs order, dfs order).
FIXTURES = [
    ({"A": ["B", "C"], "B": ["D"]}, "A", 4, ["A", "B", "C", "D"], ["A", "B", "D", "C"]),
    ({"A": ["B", "C"], "B": ["A", "D"], "C": ["D", "E"], "D": ["F"], "E": ["F"], "F": ["A"]}, "A", 10,
     ["A", "B", "C", "D", "E", "F"], ["A", "B", "D", "F", "C", "E"]),
    ({"S": ["X", "Y", "Z"], "X": ["X1", "X2"], "Y": ["Y1"], "U": ["S"]}, "S", 10,
     ["S", "X", "Y", "Z", "X1", "X2", "Y1"], ["S", "X", "X1", "X2", "Y", "Y1", "Z"]),
    ({"S": ["X", "Y", "Z"], "X": ["X1", "X2"], "Y": ["Y1"]}, "S", 4,
     ["S", "X", "Y", "Z"], ["S", "X", "X1", "X2"]),
]


@pytest.mark.parametrize("edges,start,budget,bfs,dfs", FIXTURES)
def test_hand_traced_orders(edges, start, budget, bfs, dfs):
    g = load_app_graph(graph_json(edges, start))
    assert explore(g, "bfs", budget).visited == bfs
    assert explore(g, "dfs", budget).visited == dfs


def test_load_four_screens():
    g = load_app_graph(graph_json({"A": ["B"], "B": ["C", "D"]}))
    assert len(g.screens) == 4 and g.start == "A"
    assert g.screens["C"].screenshot == "shots/C.png"
    assert g.edges["B"] == [("tap_C", "C"), ("tap_D", "D")]


def test_dangling_edge_named():
    doc = {"start": "A", "screens": {"A": {"screenshot": "a.png"}}, "edges": {"A": [{"action": "t", "to": "Z"}]}}
    with pytest.raises(GraphValidationError, match="Z") as err:
        load_app_graph(json.dumps(doc))
    assert err.value.offenders == ["Z"]


@pytest.mark.parametrize("doc", [
    {"start": "A", "screens": {}, "edges": {}},
    {"start": "Q", "screens": {"A": {"screenshot": "a.png"}}},
    {"start": "A", "screens": {"A": {"hierarchy": "a.json"}}},
    [1, 2],
])
def test_invalid_graphs(doc):
    with pytest.raises(GraphValidationError):
        load_app_graph(json.dumps(doc))


def test_malformed_json():
    with pytest.raises(GraphValidationError):
        load_app_graph("{")


def test_unknown_strategy_and_budget():
    g = load_app_graph(graph_json({"A": ["B"]}))
    with pytest.raises(ValueError):
        explore(g, "astar", 3)
    with pytest.raises(ValueError):
        explore(g, "dfs", 0)


def test_random_deterministic_and_bounded():
    g = load_app_graph(graph_json(FIXTURES[1][0]))
    a = explore(g, "random", 4, seed=9)
    assert a == explore(g, "random", 4, seed=9)
    assert len(a.visited) <= 4 and a.visited[0] == "A"
    runs = {tuple(explore(g, "random", 10, seed=s).visited) for s in range(20)}
    assert len(runs) > 1


def test_single_screen():
    g = load_app_graph(graph_json({}, "A"))
    for strategy in ("dfs", "bfs", "random"):
        assert explore(g, strategy, 5, seed=1).visited == ["A"]


def random_graph(rng, n):
    ids = [f"s{i}" for i in range(n)]
    edges = {}
    for s in ids:
        k = int(rng.integers(0, 4))
        edges[s] = [ids[int(j)] for j in rng.integers(0, n, k)]
    return ids, edges


@pytest.mark.parametrize("seed", range(100))
def test_random_graph_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 25))
    ids, edges = random_graph(rng, n)
    g = load_app_graph(graph_json(edges, ids[0], extra=ids))
    dist = bfs_distances(edges, ids[0])
    reach = set(dist)

    bfs = explore(g, "bfs", n)
    d = [dist[s] for s in bfs.visited]
    assert d == sorted(d)
    assert set(bfs.visited) == reach

    for strategy in ("dfs", "random"):
        t = explore(g, strategy, n, seed=seed)
        assert t.visited[0] == ids[0]
        assert len(set(t.visited)) == len(t.visited)
        assert set(t.visited) == reach

    budget = int(rng.integers(1, n + 1))
    for strategy in ("dfs", "bfs", "random"):
        t = explore(g, strategy, budget, seed=seed)
        assert len(t.visited) <= budget
        assert set(t.visited) <= reach
        assert t == explore(g, strategy, budget, seed=seed)


def test_dfs_oracle_against_networkx():
    # networkx preorder follows successor insertion order, which is our edge order
    # once duplicate edges are removed.
    rng = np.random.default_rng(123)
    for _ in range(30):
        ids, edges = random_graph(rng, 12)
        g = load_app_graph(graph_json(edges, ids[0], extra=ids))
        nxg = nx.DiGraph()
        nxg.add_nodes_from(ids)
        for s, outs in edges.items():
            for dd in outs:
                nxg.add_edge(s, dd)
        assert explore(g, "dfs", 12).visited == list(nx.dfs_preorder_nodes(nxg, ids[0]))
