"""Tree text serialization: annotated parenthesized trees round-trip
bit-exactly, malformed input fails with a position."""

import numpy as np
import pytest

import helpers
from sdlt import treeio
from sdlt.phylo import Catastrophe
from sdlt.treeio import TreeParseError, parse_tree, write_tree


def test_round_trip_is_canonical():
    texts = [
        "(A[&t=0.0],B[&t=0.0])[&t=-100.0];",
        "((A[&t=0.0],B[&t=-50.0])[&t=-200.0],C[&t=0.0])[&t=-300.5];",
        helpers.BENCH_TREE_TEXT,
    ]
    for s in texts:
        once = write_tree(parse_tree(s))
        assert write_tree(parse_tree(once)) == once


def test_two_catastrophes_on_one_branch():
    s = "(A[&t=0.0,cats={0.25,0.75}],B[&t=0.0])[&t=-100.0];"
    t = parse_tree(s)
    a = t.leaf_node("A")
    got = sorted((c.branch, c.u) for c in t.catastrophes)
    assert got == [(a, 0.25), (a, 0.75)]
    assert "cats={0.25,0.75}" in write_tree(t)


def test_times_preserved_bit_exactly():
    t = 0.1 + 0.2     # not representable in short decimal
    s = "(A[&t=0.0],B[&t=0.0])[&t=-%r];" % t
    tree = parse_tree(s)
    assert float(tree.root_time) == -t
    assert parse_tree(write_tree(tree)).root_time == -t


def test_random_trees_survive_round_trips():
    # node ids are coordinates (leaf ids follow name order, which the
    # text does not preserve), so compare label-invariant views
    def shape(t):
        cats = sorted((tuple(sorted(t.clade(c.branch))), round(c.u, 12))
                      for c in t.catastrophes)
        leaf_times = {t.leaf_name(i): float(t.times[i]) for i in t.leaves()}
        internal = sorted(float(t.times[j]) for j in range(1, t.L))
        return cats, leaf_times, internal

    rng = np.random.default_rng(20)
    for _ in range(100):
        L = int(rng.integers(2, 9))
        tree = helpers.coalescent_tree(
            rng, ["t%d" % i for i in range(L)],
            offset_prob=0.3, cat_prob=0.15)
        text = write_tree(tree)
        back = parse_tree(text)
        assert write_tree(back) == text
        assert shape(back) == shape(tree)


def test_parse_error_carries_position():
    with pytest.raises(TreeParseError) as err:
        parse_tree("(A[&t=0.0],B[&t=0.0)[&t=-100.0];")
    assert "column" in str(err.value)


def test_missing_time_annotations():
    # leaves default to the present; internal nodes must be dated
    t = parse_tree("(A,B[&t=-5.0])[&t=-100.0];")
    assert float(t.times[t.leaf_node("A")]) == 0.0
    with pytest.raises(TreeParseError):
        parse_tree("(A[&t=0.0],B[&t=0.0]);")


def test_trailing_garbage_rejected():
    with pytest.raises(TreeParseError):
        parse_tree("(A[&t=0.0],B[&t=0.0])[&t=-100.0]; junk")


def test_read_write_files(tmp_path):
    tree = helpers.bench_tree()
    p = tmp_path / "t.tree"
    treeio.save_tree(tree, p)
    back = treeio.read_tree(p, constraints=helpers.bench_constraints())
    assert write_tree(back) == write_tree(tree)
    assert back.constraints == tree.constraints


def test_read_trees_multiline(tmp_path):
    t1 = parse_tree("(A[&t=0.0],B[&t=0.0])[&t=-100.0];")
    t2 = parse_tree("(A[&t=0.0],B[&t=0.0])[&t=-250.0];")
    p = tmp_path / "many.trees"
    p.write_text(write_tree(t1) + "\n" + write_tree(t2) + "\n")
    back = treeio.read_trees(p)
    assert len(back) == 2
    assert back[0].root_time == -100.0
    assert back[1].root_time == -250.0


def test_constraints_apply_on_parse():
    cons = helpers.bench_constraints()
    t = parse_tree(helpers.BENCH_TREE_TEXT, constraints=cons)
    assert t.constraints == cons
    assert t.constraints_ok()
