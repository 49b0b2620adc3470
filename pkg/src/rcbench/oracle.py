"""Brute-force references used to check the search path and the closed forms.

Nothing here is on a performance path.  The x-sweep treats the query start as
continuous over ``[0, M - s]`` and integrates exactly: every change in the
returned levels happens at ``a`` or ``a - s`` for some node endpoint ``a``, so
the pair of levels is constant on each open segment between those points.
"""

from __future__ import annotations

import math
import weakref
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, List, Tuple

import numpy as np

from .core import (
    CapacityError,
    Dataset,
    LevelDifferenceDistribution,
    Number,
    ParameterRangeError,
    QueryRange,
    ValidationError,
    as_fraction,
    kappa_of,
)
from .structures import IndexStructure, SearchResult


def exact_range_answer(dataset: Dataset, query: QueryRange) -> int:
    """Number of dataset points inside ``[x, x + s)``."""
    query.check_within(dataset.domain_size)
    x = as_fraction(query.start)
    lo = np.searchsorted(dataset.points, math.ceil(x), side="left")
    hi = np.searchsorted(dataset.points, math.ceil(x + as_fraction(query.length)), side="left")
    return int(hi - lo)


def brute_force_src(structure: IndexStructure, query: QueryRange) -> SearchResult:
    """Scan every node; keep those containing Q with no child containing Q.

    Among those, the deepest wins, then the smallest lower endpoint, then the
    smallest id.
    """
    query.check_within(structure.domain_size)
    x = as_fraction(query.start)
    xf, yc = math.floor(x), math.ceil(x + as_fraction(query.length))
    contains = (structure.lo <= xf) & (structure.hi >= yc)
    parents = np.repeat(np.arange(structure.node_count), np.diff(structure.child_ptr))
    has_containing_child = np.zeros(structure.node_count, dtype=bool)
    has_containing_child[parents[contains[structure.child_ids]]] = True
    cand = np.flatnonzero(contains & ~has_containing_child)
    levels = structure.levels()
    # lexsort: last key is primary.
    order = np.lexsort((cand, structure.lo[cand], -levels[cand]))
    best = int(cand[order[0]])
    return SearchResult(best, int(levels[best]), structure.point_count(best), structure.node_count)


class _LevelTable:
    """Per level: node lower ends sorted, with the running max of upper ends."""

    def __init__(self, structure: IndexStructure):
        self.levels: List[Tuple[np.ndarray, np.ndarray]] = []
        lv = structure.levels()
        for level in range(structure.height + 1):
            ids = np.flatnonzero(lv == level)
            order = np.argsort(structure.lo[ids], kind="stable")
            lo = structure.lo[ids][order]
            hi = np.maximum.accumulate(structure.hi[ids][order])
            self.levels.append((lo, hi))

    def deepest(self, x: np.ndarray, scale: int, s_scaled: int) -> np.ndarray:
        """Deepest level holding a node that contains ``[x, x+s)`` (all values scaled)."""
        out = np.zeros(x.shape, dtype=np.int64)
        for level, (lo, hi) in enumerate(self.levels):
            idx = np.searchsorted(lo * scale, x, side="right") - 1
            ok = idx >= 0
            ok[ok] = hi[idx[ok]] * scale >= x[ok] + s_scaled
            out[ok] = np.maximum(out[ok], level)
        return out


_tables: "weakref.WeakKeyDictionary[IndexStructure, _LevelTable]" = weakref.WeakKeyDictionary()


def _table(structure: IndexStructure) -> _LevelTable:
    table = _tables.get(structure)
    if table is None:
        table = _tables[structure] = _LevelTable(structure)
    return table


@dataclass(frozen=True)
class ExactLdd:
    distribution: LevelDifferenceDistribution
    pair_measure: Dict[Tuple[int, int], Fraction]
    span: Fraction
    point_pairs: FrozenSet[Tuple[int, int]] = field(default_factory=frozenset)

    def dag_levels(self) -> set:
        """DAG levels returned on a set of starts of positive measure."""
        return {d for (_, d), m in self.pair_measure.items() if m > 0}

    def tree_levels(self) -> set:
        return {t for (t, _), m in self.pair_measure.items() if m > 0}


def exact_level_measure(tree: IndexStructure, dag: IndexStructure, s: Number) -> ExactLdd:
    """Exact level-difference distribution over uniformly random real starts.

    ``s == 1`` is the single-point query: the start is snapped to the integer
    grid, so every query addresses exactly one coordinate.
    """
    if tree.dataset is not dag.dataset and not np.array_equal(tree.dataset.points, dag.dataset.points):
        raise ValidationError("tree and DAG were built over different datasets")
    M = tree.domain_size
    s = as_fraction(s)
    if s < 1 or s > M:
        raise ParameterRangeError(f"query length {s} outside [1, {M}]")
    p, q = s.numerator, s.denominator
    scale = 2 * q  # keeps every critical point and every midpoint integral
    s2 = 2 * p
    if scale * M >= 2 ** 61:
        raise CapacityError("domain too large for exact integer sweep")
    snap = s == 1

    ends = np.unique(np.concatenate([tree.lo, tree.hi, dag.lo, dag.hi])) * scale
    top = scale * M - s2
    crit = np.unique(np.concatenate([ends, ends - s2, [0, top]]))
    crit = crit[(crit >= 0) & (crit <= top)]

    tt, dt = _table(tree), _table(dag)

    def pairs_at(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if snap:
            x = (x // scale) * scale
        return tt.deepest(x, scale, s2), dt.deepest(x, scale, s2)

    pt_tree, pt_dag = pairs_at(crit)
    point_pairs = frozenset(zip(pt_tree.tolist(), pt_dag.tolist()))

    measure: Dict[Tuple[int, int], int] = defaultdict(int)
    if crit.size > 1:
        mids = (crit[:-1] + crit[1:]) // 2
        seg = np.diff(crit)
        lt, ld = pairs_at(mids)
        keys = lt * (dag.height + 2) + ld
        uniq, inv = np.unique(keys, return_inverse=True)
        # int64 is exact here: the total is the scaled span, below 2**61.
        sums = np.zeros(uniq.size, dtype=np.int64)
        np.add.at(sums, inv, seg)
        for key, total in zip(uniq.tolist(), sums.tolist()):
            measure[divmod(key, dag.height + 2)] += int(total)

    span = Fraction(top, scale)
    pair_measure = {k: Fraction(v, scale) for k, v in sorted(measure.items())}
    diffs: Dict[int, Fraction] = defaultdict(Fraction)
    if span > 0:
        for (lt_, ld_), m in pair_measure.items():
            diffs[ld_ - lt_] += m / span
    else:
        (lt_, ld_), = point_pairs
        diffs[ld_ - lt_] = Fraction(1)
    N = tree.dataset.count
    kappa = max(diffs)
    if 1 <= s <= N:
        kappa = max(kappa, kappa_of(N, s))
    return ExactLdd(LevelDifferenceDistribution(kappa, dict(diffs)), pair_measure, span, point_pairs)
