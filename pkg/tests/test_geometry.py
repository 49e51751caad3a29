import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from urelnet.errors import GeometryError
from urelnet.scene import BoundingBox, enumerate_pairs, iou, union_box

# Coordinates on a 1/32 grid keep box differences exactly representable,
# so equality-sensitive properties are not confounded by float rounding.
coord = st.integers(min_value=-16000, max_value=16000).map(lambda v: v / 32.0)
extent = st.integers(min_value=16, max_value=9600).map(lambda v: v / 32.0)


@st.composite
def boxes(draw):
    x1 = draw(coord)
    y1 = draw(coord)
    return BoundingBox(x1, y1, x1 + draw(extent), y1 + draw(extent))


def test_iou_hand_example():
    a = BoundingBox(0, 0, 10, 10)
    b = BoundingBox(5, 5, 15, 15)
    # intersection [5,5,10,10] area 25; union 100 + 100 - 25
    assert iou(a, b) == pytest.approx(25 / 175, abs=1e-12)


def test_iou_identity():
    b = BoundingBox(3.5, -2.0, 9.25, 4.0)
    assert iou(b, b) == 1.0


def test_iou_disjoint():
    assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(2, 2, 3, 3)) == 0.0


def test_degenerate_box_rejected():
    with pytest.raises(GeometryError):
        BoundingBox(0, 0, 0, 1)
    with pytest.raises(GeometryError):
        BoundingBox(5, 5, 4, 6)
    with pytest.raises(GeometryError):
        BoundingBox(0, 0, math.nan, 1)
    with pytest.raises(GeometryError):
        BoundingBox(0, 0, math.inf, 1)


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0


@given(boxes(), boxes())
def test_iou_one_only_for_identical(a, b):
    if a != b:
        assert iou(a, b) < 1.0


def test_union_hand_examples():
    assert union_box(BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 3, 3)) == BoundingBox(0, 0, 3, 3)
    b = BoundingBox(1, 2, 3, 4)
    assert union_box(b, b) == b
    assert union_box(BoundingBox(2, 2, 6, 6), BoundingBox(4, 4, 10, 8)) == BoundingBox(2, 2, 10, 8)


@given(boxes(), boxes(), boxes())
def test_union_algebra(a, b, c):
    assert union_box(a, b) == union_box(b, a)
    assert union_box(union_box(a, b), c) == union_box(a, union_box(b, c))
    assert union_box(a, a) == a
    u = union_box(a, b)
    assert u.contains(a) and u.contains(b)


@pytest.mark.parametrize("n,expected", [(1, 0), (2, 2), (4, 12)])
def test_enumerate_pairs_counts(n, expected):
    pairs = enumerate_pairs(list(range(n)))
    assert len(pairs) == expected


def test_enumerate_pairs_two():
    assert enumerate_pairs(["a", "b"]) == [(0, 1), (1, 0)]


@given(st.integers(min_value=0, max_value=10))
def test_enumerate_pairs_matches_brute_force(n):
    items = list(range(n))
    pairs = enumerate_pairs(items)
    brute = []
    for i in range(n):
        for j in range(n):
            if i != j:
                brute.append((i, j))
    assert pairs == brute
    assert len(set(pairs)) == len(pairs)
    assert all(i != j for i, j in pairs)
