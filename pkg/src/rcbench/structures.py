"""1D-Tree and c-DAG builders with single-range-cover (SRC) search.

Nodes are stored column-wise in level-major order.  A node is identified by
the half-open index range ``[start, stop)`` of the sorted dataset it holds;
its canonical interval is ``[b(start), b(stop))`` where ``b(0) = 0``,
``b(N) = M`` and ``b(i)`` is the i-th point otherwise.  Siblings therefore
tile their parent exactly and the root covers the whole domain.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Tuple, Union

import numpy as np

from .core import (
    ConfigurationError,
    ConstructionError,
    DagConfig,
    Dataset,
    DomainError,
    Interval,
    NodeRecord,
    Number,
    QueryRange,
    ValidationError,
    as_fraction,
    theory_alpha_of,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class IndexStructure:
    config: DagConfig
    dataset: Dataset
    level_offsets: np.ndarray  # ids of level l are level_offsets[l]:level_offsets[l+1]
    start: np.ndarray
    stop: np.ndarray
    child_ptr: np.ndarray
    child_ids: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    clamped_children: int = 0

    root: int = 0

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def height(self) -> int:
        return len(self.level_offsets) - 2

    @property
    def regular(self) -> bool:
        """Tree, or power-of-two N with c = 2^alpha + 1."""
        n = self.dataset.count
        return self.config.is_tree or (n & (n - 1) == 0 and theory_alpha_of(self.config.c) is not None)

    @property
    def node_count(self) -> int:
        return int(self.start.size)

    @property
    def domain_size(self) -> int:
        return self.dataset.domain_size

    def level_of(self, node_id: int) -> int:
        return int(np.searchsorted(self.level_offsets, node_id, side="right") - 1)

    def level_ids(self, level: int) -> range:
        return range(int(self.level_offsets[level]), int(self.level_offsets[level + 1]))

    def children(self, node_id: int) -> np.ndarray:
        return self.child_ids[self.child_ptr[node_id]:self.child_ptr[node_id + 1]]

    def point_count(self, node_id: int) -> int:
        return int(self.stop[node_id] - self.start[node_id])

    def node(self, node_id: int) -> NodeRecord:
        return NodeRecord(
            id=int(node_id),
            level=self.level_of(node_id),
            interval=Interval(int(self.lo[node_id]), int(self.hi[node_id])),
            point_count=self.point_count(node_id),
            point_offset=int(self.start[node_id]),
            children=tuple(int(c) for c in self.children(node_id)),
        )

    def nodes(self) -> Iterator[NodeRecord]:
        for i in range(self.node_count):
            yield self.node(i)

    def levels(self) -> np.ndarray:
        """Level of every node, aligned with node ids."""
        return np.repeat(np.arange(self.height + 1), np.diff(self.level_offsets))

    def points_of(self, node_id: int) -> np.ndarray:
        return self.dataset.points[self.start[node_id]:self.stop[node_id]]


@dataclass(frozen=True)
class SearchResult:
    node: int
    level: int
    covered_count: int
    visited_nodes: int


def _boundaries(dataset: Dataset) -> np.ndarray:
    b = np.empty(dataset.count + 1, dtype=np.int64)
    b[:-1] = dataset.points
    b[0] = 0
    b[-1] = dataset.domain_size
    return b


def _children_of_level(start: np.ndarray, n: np.ndarray, c: int) -> Tuple[np.ndarray, np.ndarray, int]:
    """Child index ranges for parents ``[start, start+n)``, one column per child."""
    half = n // 2
    end = start + n
    starts = [start, start + half]
    stops = [start + half, end]
    clamped = 0
    if c > 2:
        size = n - half
        for m in range(1, c - 1):
            s0 = start + (m * n) // (2 * (c - 1))
            over = s0 + size > end
            clamped += int(np.count_nonzero(over))
            e0 = np.minimum(s0 + size, end)
            starts.insert(m, e0 - size)
            stops.insert(m, e0)
    return np.stack(starts, axis=1), np.stack(stops, axis=1), clamped


def _build(dataset: Dataset, config: DagConfig) -> IndexStructure:
    N = dataset.count
    if N == 0:
        raise ConstructionError("cannot build an index over an empty dataset")
    c = config.c
    width = N + 1

    level_start = [np.zeros(1, dtype=np.int64)]
    level_stop = [np.full(1, N, dtype=np.int64)]
    ptr_chunks: List[np.ndarray] = []
    child_chunks: List[np.ndarray] = []
    clamped_total = 0
    n_nodes = 1

    while True:
        st, sp = level_start[-1], level_stop[-1]
        n = sp - st
        internal = n >= 2
        counts = np.zeros(st.size, dtype=np.int64)
        if not internal.any():
            ptr_chunks.append(counts)
            break
        cs, ce, clamped = _children_of_level(st[internal], n[internal], c)
        clamped_total += clamped
        keys, inverse = np.unique(cs * width + ce, return_inverse=True)
        local = np.sort(inverse.reshape(cs.shape), axis=1)
        keep = np.ones(local.shape, dtype=bool)
        keep[:, 1:] = local[:, 1:] != local[:, :-1]
        counts[internal] = keep.sum(axis=1)
        ptr_chunks.append(counts)
        child_chunks.append(local[keep] + n_nodes)
        level_start.append(keys // width)
        level_stop.append(keys % width)
        n_nodes += keys.size

    if clamped_total:
        log.info("%s: clamped %d middle children to their parent's last point", config.name, clamped_total)

    sizes = [a.size for a in level_start]
    level_offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    start = np.concatenate(level_start)
    stop = np.concatenate(level_stop)
    counts = np.concatenate(ptr_chunks)
    child_ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    child_ids = np.concatenate(child_chunks) if child_chunks else np.zeros(0, dtype=np.int64)

    for lvl in range(len(sizes)):
        seg = stop[level_offsets[lvl]:level_offsets[lvl + 1]]
        # Lexicographic (start, stop) order must also order stops; batch search relies on it.
        if seg.size > 1 and np.any(np.diff(seg) < 0):
            raise ValidationError(f"level {lvl} intervals are not monotone")

    b = _boundaries(dataset)
    for arr in (level_offsets, start, stop, child_ptr, child_ids):
        arr.setflags(write=False)
    lo, hi = b[start], b[stop]
    lo.setflags(write=False)
    hi.setflags(write=False)
    return IndexStructure(
        config=config,
        dataset=dataset,
        level_offsets=level_offsets,
        start=start,
        stop=stop,
        child_ptr=child_ptr,
        child_ids=child_ids,
        lo=lo,
        hi=hi,
        clamped_children=clamped_total,
    )


def build_tree(dataset: Dataset) -> IndexStructure:
    """Binary median-split tree; the left child takes ``floor(n/2)`` points."""
    return _build(dataset, DagConfig(2))


def build_cdag(dataset: Dataset, config: Union[DagConfig, int]) -> IndexStructure:
    """c-DAG: median halves plus ``c - 2`` overlapping middle children.

    The m-th middle child holds ``ceil(n/2)`` consecutive points starting at
    offset ``floor(m*n / (2(c-1)))``.  Children with identical point ranges
    are merged, both within a parent and across a level.
    """
    if isinstance(config, int):
        config = DagConfig(config)
    if config.c < 3:
        raise ConfigurationError(f"a c-DAG needs c >= 3, got {config.c}; use build_tree for c = 2")
    return _build(dataset, config)


def build_structure(dataset: Dataset, c: int) -> IndexStructure:
    """``c == 2`` builds the 1D-Tree, anything larger a c-DAG."""
    return build_tree(dataset) if c == 2 else build_cdag(dataset, DagConfig(c))


def _query_bounds(query: QueryRange) -> Tuple[int, int]:
    # Node endpoints are integers, so containment only depends on these two.
    x = as_fraction(query.start)
    return math.floor(x), math.ceil(x + as_fraction(query.length))


def src_search(structure: IndexStructure, query: QueryRange) -> SearchResult:
    """Descend from the root into the first child whose interval contains the query.

    On regular structures (the tree, or ``N = 2^(n+1)`` with ``c = 2^alpha + 1``)
    the plain descent already ends at the deepest containing node with the
    smallest lower endpoint, in at most ``c*H + 1`` node tests.  Irregular
    shapes can hold the same point range on two levels or strand the descent
    one level short, so there the search also walks the containing run of the
    current level before giving up, and finishes with a leftward scan.
    """
    query.check_within(structure.domain_size)
    xf, yc = _query_bounds(query)
    lo, hi = structure.lo, structure.hi
    ptr, kids = structure.child_ptr, structure.child_ids
    regular = structure.regular
    visited = 1

    def first_containing_child(node: int) -> int:
        nonlocal visited
        for child in kids[ptr[node]:ptr[node + 1]]:
            visited += 1
            if lo[child] <= xf and yc <= hi[child]:
                return int(child)
        return -1

    def containing_run(node: int, level: int) -> List[int]:
        nonlocal visited
        first, last = int(structure.level_offsets[level]), int(structure.level_offsets[level + 1])
        run = []
        for step, bound in ((-1, first - 1), (1, last)):
            u = node + step
            while u != bound:
                visited += 1
                if not (lo[u] <= xf and yc <= hi[u]):
                    break
                run.append(u)
                u += step
        return run

    node = structure.root
    level = 0
    while True:
        nxt = first_containing_child(node)
        if nxt < 0 and not regular:
            for other in containing_run(node, level):
                nxt = first_containing_child(other)
                if nxt >= 0:
                    break
        if nxt < 0:
            break
        node = nxt
        level += 1
    if not regular:
        first = int(structure.level_offsets[level])
        while node > first:
            visited += 1
            if not (lo[node - 1] <= xf and yc <= hi[node - 1]):
                break
            node -= 1
    return SearchResult(node, level, structure.point_count(node), visited)


def locate_many(structure: IndexStructure, starts: np.ndarray, length: Number) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised SRC search for many starts sharing one length.

    Returns ``(node_ids, levels)``.  Same answer as :func:`src_search`: the
    deepest containing level, smallest interval (then id) within it.
    """
    starts = np.asarray(starts)
    if starts.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    length = as_fraction(length)
    if starts.min() < 0 or as_fraction(starts.max().item()) + length > structure.domain_size:
        raise DomainError("query batch leaves the domain")
    if np.issubdtype(starts.dtype, np.integer):
        xf = starts.astype(np.int64)
        frac_pos = np.zeros(starts.shape, dtype=bool)
    else:
        fl = np.floor(starts)
        xf = fl.astype(np.int64)
        frac_pos = starts > fl
    if length.denominator == 1:
        yc = xf + int(length) + frac_pos
    else:
        yc = np.ceil(starts + float(length)).astype(np.int64)

    node = np.zeros(starts.shape, dtype=np.int64)
    level = np.zeros(starts.shape, dtype=np.int64)
    active = np.ones(starts.shape, dtype=bool)
    offs = structure.level_offsets
    for lvl in range(1, structure.height + 1):
        a, b = int(offs[lvl]), int(offs[lvl + 1])
        idx = np.flatnonzero(active)
        lo_l, hi_l = structure.lo[a:b], structure.hi[a:b]
        f = np.searchsorted(hi_l, yc[idx], side="left")
        ok = f < (b - a)
        ok[ok] = lo_l[f[ok]] <= xf[idx[ok]]
        hit = idx[ok]
        node[hit] = a + f[ok]
        level[hit] = lvl
        active[:] = False
        active[hit] = True
        if not hit.size:
            break
    return node, level


def payload_size(structure: IndexStructure) -> int:
    """Total stored points, summed over all nodes."""
    return int(np.sum(structure.stop - structure.start))


def level_histogram(structure: IndexStructure) -> Dict[int, int]:
    return {lvl: int(n) for lvl, n in enumerate(np.diff(structure.level_offsets))}


def structure_to_json(structure: IndexStructure) -> dict:
    """Nodes as ``[id, level, lo, hi, point_offset, point_count, [child ids]]``."""
    levels = structure.levels()
    nodes = []
    for i in range(structure.node_count):
        nodes.append([
            i,
            int(levels[i]),
            int(structure.lo[i]),
            int(structure.hi[i]),
            int(structure.start[i]),
            int(structure.stop[i] - structure.start[i]),
            [int(c) for c in structure.children(i)],
        ])
    return {
        "structure": structure.name,
        "c": structure.config.c,
        "N": structure.dataset.count,
        "M": structure.domain_size,
        "height": structure.height,
        "payload": payload_size(structure),
        "levels": {str(k): v for k, v in level_histogram(structure).items()},
        "nodes": nodes,
    }


def dump_structure(structure: IndexStructure, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(structure_to_json(structure), separators=(",", ":")) + "\n")
