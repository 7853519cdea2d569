"""Order-statistic selection without sorting.

Items are ordered by descending value, with the lower index winning ties.
Under that order every item has a distinct key ``(-value, index)``, which
keeps the partition logic free of duplicate handling.

Two implementations are provided:

* :func:`introselect` -- quickselect with a median-of-3 pivot that falls back
  to median-of-medians once the recursion depth exceeds ``2 * log2(n)``.
  Pure Python, worst case O(n).
* :func:`partition_rank_pair` -- numpy's ``partition`` (itself an
  introselect) for the values, followed by an O(n) counting pass that
  recovers the tie-broken indices. Works row-wise on 2-D input.
"""

from __future__ import annotations

import numpy as np


def _keys(values):
    return [(-float(v), i) for i, v in enumerate(values)]


def _median3(a, i, j, k):
    x, y, z = a[i], a[j], a[k]
    if x < y:
        if y < z:
            return j
        return k if x < z else i
    if z < y:
        return j
    return k if z < x else i


def _partition(a, lo, hi, p):
    """Lomuto partition of ``a[lo:hi+1]`` around ``a[p]``; returns the pivot's final slot."""
    a[p], a[hi] = a[hi], a[p]
    pivot = a[hi]
    store = lo
    for i in range(lo, hi):
        if a[i] < pivot:
            a[i], a[store] = a[store], a[i]
            store += 1
    a[store], a[hi] = a[hi], a[store]
    return store


def _median_of_medians(a, lo, hi):
    """Index (into ``a``) of a pivot guaranteed to sit in the middle 30-70%."""
    n = hi - lo + 1
    if n <= 5:
        block = sorted(range(lo, hi + 1), key=a.__getitem__)
        return block[(n - 1) // 2]
    medians = []
    for start in range(lo, hi + 1, 5):
        stop = min(start + 4, hi)
        block = sorted(range(start, stop + 1), key=a.__getitem__)
        medians.append(block[(len(block) - 1) // 2])
    # gather the block medians to the front and recurse on them
    for offset, idx in enumerate(medians):
        a[lo + offset], a[idx] = a[idx], a[lo + offset]
    m_hi = lo + len(medians) - 1
    return _select_mom(a, lo, m_hi, lo + (len(medians) - 1) // 2)


def _select_mom(a, lo, hi, target):
    while lo < hi:
        p = _median_of_medians(a, lo, hi)
        p = _partition(a, lo, hi, p)
        if p == target:
            return p
        if target < p:
            hi = p - 1
        else:
            lo = p + 1
    return lo


def _introselect_keys(a, target):
    lo, hi = 0, len(a) - 1
    depth = 2 * max(len(a), 1).bit_length()
    while lo < hi:
        if depth == 0:
            return _select_mom(a, lo, hi, target)
        depth -= 1
        p = _median3(a, lo, (lo + hi) // 2, hi)
        p = _partition(a, lo, hi, p)
        if p == target:
            return p
        if target < p:
            hi = p - 1
        else:
            lo = p + 1
    return lo


def introselect(values, rank):
    """Return the item index holding 0-based ``rank`` in descending order.

    After the call the working key list is partitioned around ``rank``; the
    input sequence itself is not modified.
    """
    n = len(values)
    if not 0 <= rank < n:
        raise IndexError(f"rank {rank} out of range for {n} items")
    keys = _keys(values)
    slot = _introselect_keys(keys, rank)
    return keys[slot][1]


def introselect_pair(values, k):
    """Indices of the k-th and (k+1)-th largest items (1-based k).

    One selection finds rank k; the (k+1)-th is then the minimum key of the
    right-hand partition, a linear scan.
    """
    n = len(values)
    if not 1 <= k <= n - 1:
        raise IndexError(f"k={k} needs 1 <= k <= {n - 1}")
    keys = _keys(values)
    slot = _introselect_keys(keys, k - 1)
    nxt = min(keys[slot + 1:])
    return keys[slot][1], nxt[1]


def _tie_broken_index(x, value, rank):
    """Index of the item at 1-based ``rank`` given that its value is ``value``."""
    above = np.count_nonzero(x > value[..., None], axis=-1)
    need = rank - above
    running = np.cumsum(x == value[..., None], axis=-1)
    return np.argmax(running >= need[..., None], axis=-1)


def partition_rank_pair(x, k):
    """Vectorized k-th / (k+1)-th largest values and indices along the last axis.

    Returns ``(kth_value, kplus1_value, kth_index, kplus1_index)``; scalars for
    1-D input, arrays of shape ``x.shape[:-1]`` otherwise.
    """
    x = np.asarray(x, dtype=np.float64)
    part = np.partition(-x, (k - 1, k), axis=-1)
    kth = -part[..., k - 1]
    nxt = -part[..., k]
    i_k = _tie_broken_index(x, np.asarray(kth), k)
    i_n = _tie_broken_index(x, np.asarray(nxt), k + 1)
    return kth, nxt, i_k, i_n
