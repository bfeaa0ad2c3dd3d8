import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from skillchain.benchmark.linearize import (
    NotIndependentPairs,
    PartialOrder,
    TooLarge,
    count_linearizations,
    pairs_formula,
)


@pytest.mark.parametrize("m,want", [(0, 1), (1, 1), (2, 6), (3, 90), (4, 2520)])
def test_independent_pairs_all_modes_agree(m, want):
    po = PartialOrder.independent_pairs(m)
    assert pairs_formula(m) == want
    for mode in ("brute_force", "formula_independent_pairs", "dp"):
        assert count_linearizations(po, mode) == want


@st.composite
def dags(draw):
    n = draw(st.integers(1, 7))
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]
    edges = draw(st.sets(st.sampled_from(pairs), max_size=len(pairs))) if pairs else set()
    perm = draw(st.permutations(range(n)))
    return PartialOrder(n, frozenset((perm[a], perm[b]) for a, b in edges))


@given(dags())
def test_brute_force_matches_dp_on_random_dags(po):
    assert count_linearizations(po, "brute_force") == count_linearizations(po, "dp")


def test_chain_and_antichain():
    assert count_linearizations(PartialOrder(5, frozenset((i, i + 1) for i in range(4))), "dp") == 1
    assert count_linearizations(PartialOrder(6, frozenset()), "dp") == math.factorial(6)


def test_cycles_and_bad_edges_rejected():
    with pytest.raises(ValueError):
        PartialOrder(3, frozenset({(0, 1), (1, 2), (2, 0)}))
    with pytest.raises(ValueError):
        PartialOrder(2, frozenset({(0, 5)}))


def test_mode_guards():
    with pytest.raises(TooLarge):
        count_linearizations(PartialOrder.independent_pairs(6), "brute_force")
    with pytest.raises(NotIndependentPairs):
        count_linearizations(PartialOrder(3, frozenset({(0, 1)})), "formula")
    with pytest.raises(ValueError):
        count_linearizations(PartialOrder(2, frozenset()), "guess")


def test_named_edges_file(tmp_path):
    path = tmp_path / "po.json"
    path.write_text(json.dumps({"nodes": ["pick_a", "place_a", "pick_b", "place_b"],
                                "edges": [["pick_a", "place_a"], ["pick_b", "place_b"]]}))
    po = PartialOrder.load(path)
    assert po.is_independent_pairs() and count_linearizations(po, "dp") == 6
    with pytest.raises(ValueError):
        PartialOrder.from_json({"nodes": ["a"], "edges": [["a", "b"]]})
