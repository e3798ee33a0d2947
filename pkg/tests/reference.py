"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the code under test beyond plain data types.
"""

from __future__ import annotations

import math
from fractions import Fraction


def ref_correlation(a, b, sets):
    """Correlation straight from the definition over a list of key sets."""
    na = sum(1 for s in sets if a in s)
    nb = sum(1 for s in sets if b in s)
    if na == 0 or nb == 0:
        return None
    both = sum(1 for s in sets if a in s and b in s)
    return Fraction(both, na) + Fraction(both, nb)


def ref_distance(a, b, sets):
    c = ref_correlation(a, b, sets)
    if c is None:
        return None
    return math.inf if c == 0 else 1 / c


def ref_agglomerate(keys, sets, threshold):
    """O(n^3)-per-step complete linkage recomputed from scratch every merge.

    Ties: smallest distance, then smallest (min member of first, min member
    of second) identifier pair.
    """
    clusters = [frozenset([k]) for k in sorted(keys)]
    pair = {}
    for a in keys:
        for b in keys:
            if a != b:
                pair[(a, b)] = ref_distance(a, b, sets)
    while len(clusters) > 1:
        best = None
        for i, ci in enumerate(clusters):
            for cj in clusters[i + 1 :]:
                d = max(pair[(a, b)] for a in ci for b in cj)
                ida, idb = sorted((min(ci), min(cj)))
                cand = (d, ida, idb)
                if best is None or cand < best:
                    best = cand
                    chosen = (ci, cj)
        if best[0] == math.inf or best[0] > threshold:
            break
        ci, cj = chosen
        clusters = [c for c in clusters if c is not ci and c is not cj] + [ci | cj]
        clusters.sort(key=min)
    return sorted(clusters, key=min)


def ref_sessionize(stamped_keys, window):
    """stamped_keys: sorted list of (t, key). Gap rule, key sets only."""
    out = []
    last = None
    for t, k in stamped_keys:
        if last is None or t - last > window:
            out.append(set())
        out[-1].add(k)
        last = t
    return [frozenset(s) for s in out]


class RefStore:
    """Single flat list of (t, seq, key, value) with linear scans."""

    def __init__(self):
        self.rows = []

    def record(self, key, t, value):
        self.rows.append((t, len(self.rows), key, value))

    def value_at(self, key, t):
        best = None
        for row in self.rows:
            if row[2] == key and row[0] <= t and (best is None or row[:2] > best[:2]):
                best = row
        return None if best is None else ("v", best[3])

    def history(self, key):
        return [(r[0], r[3]) for r in sorted(self.rows) if r[2] == key]
