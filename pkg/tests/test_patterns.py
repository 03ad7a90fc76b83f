"""Pattern-space primitives: Hamming structure, neighbor sets, the
branching expansion operator, completion sets, and registration."""

import numpy as np
import pytest

from sdlt import patterns
from sdlt.patterns import (MISSING, RegistrationRule, as_pattern,
                           branch_expand, compatible_binary_patterns,
                           format_pattern, hamming, index_to_pattern,
                           neighbors_down, neighbors_up, pattern_to_index,
                           register, weight)


def test_weight_and_distance_transfer_example():
    before = (1, 0, 0, 0, 0, 0)
    after = (1, 0, 1, 0, 0, 0)
    assert weight(after) == 2
    assert hamming(before, after) == 1


def test_distance_to_self_is_zero():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = rng.integers(0, 2, size=6)
        assert hamming(p, p) == 0


def test_distance_matches_bit_loop():
    rng = np.random.default_rng(1)
    for _ in range(200):
        w = int(rng.integers(1, 9))
        p = rng.integers(0, 2, size=w)
        q = rng.integers(0, 2, size=w)
        naive = sum(int(a != b) for a, b in zip(p, q))
        assert hamming(p, q) == naive


def test_width_mismatch_rejected():
    with pytest.raises(ValueError):
        hamming((1, 0), (1, 0, 1))


def test_neighbors_of_singleton():
    # clearing the only set bit would leave the empty pattern, which is
    # not part of the space
    idx = pattern_to_index((1, 0))
    assert neighbors_down(idx, 2) == []
    assert [index_to_pattern(i, 2).tolist() for i in neighbors_up(idx, 2)] \
        == [[1, 1]]


def test_neighbor_counts():
    for width in (2, 3, 4):
        for idx in range(1, 1 << width):
            s = weight(index_to_pattern(idx, width))
            assert len(neighbors_down(idx, width)) == s - (1 if s == 1 else 0)
            assert len(neighbors_up(idx, width)) == width - s


def test_neighbors_exhaustive_by_filter():
    for width in (2, 3, 4):
        space = list(range(1, 1 << width))
        for idx in space:
            p = index_to_pattern(idx, width)
            down = {q for q in space
                    if hamming(p, index_to_pattern(q, width)) == 1
                    and weight(index_to_pattern(q, width)) == weight(p) - 1}
            up = {q for q in space
                  if hamming(p, index_to_pattern(q, width)) == 1
                  and weight(index_to_pattern(q, width)) == weight(p) + 1}
            assert set(neighbors_down(idx, width)) == down
            assert set(neighbors_up(idx, width)) == up


def test_up_down_duality():
    width = 4
    for p in range(1, 1 << width):
        for q in neighbors_up(p, width):
            assert p in neighbors_down(q, width)


def test_space_size():
    for width in (1, 2, 5):
        space = [i for i in range(1, 1 << width)]
        assert len(space) == 2 ** width - 1


def test_branch_expand_duplicates_split_entry():
    # mass on (1,0,0,0) with the first lineage splitting lands on
    # (1,1,0,0,0); patterns whose two offspring entries disagree get 0
    v = np.zeros(16)
    v[pattern_to_index((1, 0, 0, 0))] = 2.5
    out = branch_expand(v, 1)
    assert out.shape == (32,)
    assert out[pattern_to_index((1, 1, 0, 0, 0))] == 2.5
    assert out[pattern_to_index((1, 0, 0, 0, 0))] == 0.0
    assert out[pattern_to_index((0, 1, 0, 0, 0))] == 0.0


def test_branch_expand_all_ones():
    v = np.zeros(8)
    v[7] = 1.0
    out = branch_expand(v, 2)
    assert out[15] == 1.0
    assert out.sum() == 1.0


def test_branch_expand_mass_and_injectivity():
    rng = np.random.default_rng(2)
    for _ in range(40):
        width = int(rng.integers(1, 6))
        pos = int(rng.integers(1, width + 1))
        v = rng.uniform(size=1 << width)
        v[0] = 0.0
        out = branch_expand(v, pos)
        assert np.isclose(out.sum(), v.sum())
        # nonzero targets are exactly the images of nonzero sources
        assert np.count_nonzero(out) == np.count_nonzero(v)


def test_register_drops_all_absent_column():
    counts = {(0, 0, 0): 4, (1, 0, 0): 2, (1, 1, 0): 1}
    out = register(counts, RegistrationRule(min_present=1))
    assert out == {(1, 0, 0): 2, (1, 1, 0): 1}


def test_register_empty_rule_is_identity():
    counts = {(0, 0): 3, (1, 0): 1}
    assert register(counts, RegistrationRule()) == counts


def test_register_idempotent_and_composable():
    rng = np.random.default_rng(3)
    r1 = RegistrationRule(min_present=1)
    r2 = RegistrationRule(max_present=2)
    both = RegistrationRule(min_present=1, max_present=2)
    for _ in range(25):
        counts = {}
        for _ in range(30):
            pat = tuple(int(c) for c in
                        rng.choice([0, 1, MISSING], size=4,
                                   p=[0.4, 0.4, 0.2]))
            counts[pat] = counts.get(pat, 0) + 1
        once = register(counts, both)
        assert register(once, both) == once
        assert register(register(counts, r1), r2) == once


def test_require_present_rule():
    counts = {(1, 0): 2, (0, 1): 3, (1, 1): 1}
    out = register(counts, RegistrationRule(require_present=(0,)))
    assert out == {(1, 0): 2, (1, 1): 1}


def test_max_potential_counts_unknowns_as_potential():
    counts = {(1, MISSING, MISSING): 1, (1, 1, 0): 2}
    out = register(counts, RegistrationRule(max_potential=2))
    assert out == {(1, 1, 0): 2}


def test_compatible_patterns_example():
    got = {tuple(index_to_pattern(i, 3))
           for i in compatible_binary_patterns((1, MISSING, 0))}
    assert got == {(1, 0, 0), (1, 1, 0)}


def test_compatible_patterns_no_unknowns():
    assert [tuple(index_to_pattern(i, 3))
            for i in compatible_binary_patterns((0, 1, 1))] == [(0, 1, 1)]


def test_compatible_patterns_count():
    # 2^(number of unknowns), minus one when every known entry is absent
    # (the all-absent completion falls outside the space)
    rng = np.random.default_rng(4)
    for width in (1, 2, 3, 4):
        pats = [tuple(int(c) for c in
                      rng.choice([0, 1, MISSING], size=width))
                for _ in range(40)]
        for q in pats:
            unknowns = sum(1 for c in q if c == MISSING)
            all_zero_known = all(c != 1 for c in q)
            expect = 2 ** unknowns - (1 if all_zero_known else 0)
            assert len(compatible_binary_patterns(q)) == expect


def test_pattern_string_round_trip():
    assert format_pattern(as_pattern("1?0")) == "1?0"
    assert list(as_pattern("1?0")) == [1, MISSING, 0]
    with pytest.raises(ValueError):
        as_pattern("1x0")
