import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dftopk.selection import introselect, introselect_pair, partition_rank_pair


def oracle_order(x):
    # full sort: descending value, lower index first among equals
    return sorted(range(len(x)), key=lambda i: (-x[i], i))


scores = st.lists(st.integers(-5, 5).map(float) | st.floats(-1e6, 1e6), min_size=2, max_size=60)


@given(scores, st.data())
def test_introselect_matches_sort(x, data):
    rank = data.draw(st.integers(0, len(x) - 1))
    assert introselect(x, rank) == oracle_order(x)[rank]


@given(scores, st.data())
def test_pair_routes_agree_with_sort(x, data):
    k = data.draw(st.integers(1, len(x) - 1))
    order = oracle_order(x)
    assert introselect_pair(x, k) == (order[k - 1], order[k])
    kth, nxt, i_k, i_n = partition_rank_pair(np.array(x), k)
    assert (int(i_k), int(i_n)) == (order[k - 1], order[k])
    assert kth == x[order[k - 1]] and nxt == x[order[k]]


def test_all_equal_takes_lowest_indices():
    x = [2.0] * 7
    assert introselect_pair(x, 3) == (2, 3)
    assert partition_rank_pair(np.array(x), 3)[2:] == (2, 3)


def test_batched_rows_are_independent(rng):
    X = rng.integers(0, 4, size=(50, 12)).astype(float)
    kth, nxt, i_k, i_n = partition_rank_pair(X, 5)
    for row, a, b in zip(X, i_k, i_n):
        order = oracle_order(list(row))
        assert (a, b) == (order[4], order[5])


def test_adversarial_inputs_stay_correct():
    # sorted, reversed and organ-pipe inputs push quickselect towards its worst case
    n = 301
    for x in (list(range(n)), list(range(n))[::-1],
              list(range(0, n, 2)) + list(range(n - 2, 0, -2))):
        for rank in (0, n // 3, n - 1):
            assert introselect(x, rank) == oracle_order(x)[rank]


def test_out_of_range():
    with pytest.raises(IndexError):
        introselect([1.0, 2.0], 2)
    with pytest.raises(IndexError):
        introselect_pair([1.0, 2.0], 2)
