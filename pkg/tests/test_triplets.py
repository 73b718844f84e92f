import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crosstriplet.triplets import (
    PRESET_NAMES,
    CombinationSet,
    Sampled,
    TripletPattern,
    enumerate_triplets,
    preset,
)

ALL_PATTERNS = [TripletPattern.parse("".join(p)) for p in itertools.product("AV", repeat=3)]


def brute_force(labels, pattern):
    """Filter every index triple by the label and self-pair rules."""
    n = len(labels)
    out = []
    for a, p, q in itertools.product(range(n), repeat=3):
        if labels[a] != labels[p] or labels[a] == labels[q]:
            continue
        if pattern.anchor == pattern.positive and a == p:
            continue
        out.append((a, p, q))
    return out


def pats(*names):
    return tuple(TripletPattern.parse(n) for n in names)


def test_presets_exact():
    assert preset("baseline1").patterns == pats("AAA", "VVV")
    assert preset("baseline2").patterns == pats("AAV", "VVA")
    assert preset("baseline3").patterns == pats("AVV", "VAA")
    assert preset("baseline4").patterns == pats("AAV", "VVA", "AVV", "VAA")
    assert preset("full").patterns == pats("AAV", "VVA", "AVV", "VAA", "AVA", "VAV")
    assert set(preset("baseline5").patterns) == set(ALL_PATTERNS)
    assert len(preset("baseline5")) == 8
    assert set(preset("baseline5")) == set(preset("baseline1")) | set(preset("full"))


def test_full_preset_is_all_cross():
    assert all(p.is_cross for p in preset("full"))
    assert not any(p.is_cross for p in preset("baseline1"))


def test_unknown_preset():
    with pytest.raises(ValueError, match="unknown"):
        preset("baseline9")


def test_combination_set_invariants():
    with pytest.raises(ValueError):
        CombinationSet("empty", ())
    with pytest.raises(ValueError):
        CombinationSet("dup", pats("AAV", "AAV"))


def test_pattern_parse_and_str():
    p = TripletPattern.parse("(A,V,V)")
    assert str(p) == "(A,V,V)"
    with pytest.raises(ValueError):
        TripletPattern.parse("AX")


def test_enumerate_examples():
    got = enumerate_triplets([0, 0, 1, 1], TripletPattern.parse("AAV")).tolist()
    assert got == [[0, 1, 2], [0, 1, 3], [1, 0, 2], [1, 0, 3],
                   [2, 3, 0], [2, 3, 1], [3, 2, 0], [3, 2, 1]]
    assert enumerate_triplets([2, 2, 2], TripletPattern.parse("AVA")).shape == (0, 3)
    assert enumerate_triplets([0, 1], TripletPattern.parse("AVV")).tolist() == [[0, 0, 1], [1, 1, 0]]


@given(st.lists(st.integers(0, 3), min_size=1, max_size=10), st.sampled_from(ALL_PATTERNS))
def test_enumerate_matches_brute_force(labels, pattern):
    got = [tuple(t) for t in enumerate_triplets(labels, pattern).tolist()]
    assert got == brute_force(labels, pattern)


@given(st.lists(st.integers(0, 3), min_size=1, max_size=12), st.sampled_from(ALL_PATTERNS))
def test_enumerate_count_combinatorial(labels, pattern):
    labels = np.array(labels)
    n = labels.size
    expected = 0
    for cls in np.unique(labels):
        size = int((labels == cls).sum())
        pos_choices = size if pattern.anchor != pattern.positive else size - 1
        expected += size * pos_choices * (n - size)
    assert enumerate_triplets(labels, pattern).shape[0] == expected


def test_sampled_subset_and_deterministic():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 3, size=12)
    for pattern in ALL_PATTERNS:
        full = {tuple(t) for t in enumerate_triplets(labels, pattern).tolist()}
        s1 = enumerate_triplets(labels, pattern, Sampled(4, seed=9))
        s2 = enumerate_triplets(labels, pattern, "sampled:4:9")
        assert np.array_equal(s1, s2)
        assert {tuple(t) for t in s1.tolist()} <= full
        per_anchor = np.bincount(s1[:, 0], minlength=12) if s1.size else np.zeros(12)
        assert per_anchor.max() <= 4
        assert len(set(map(tuple, s1.tolist()))) == s1.shape[0]


def test_preset_names():
    assert PRESET_NAMES == ("baseline1", "baseline2", "baseline3", "baseline4", "baseline5", "full")
