"""Random query workloads, the batch stabilization protocol and report output.

Starts are drawn from a Philox generator keyed by the seed, one draw of
``batch_size`` uniforms per batch, so a run is reproducible bit for bit.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .analytics import (
    BoundReport,
    FitResult,
    check_theory_domain,
    corollary_bounds,
    fit_closest_theoretical,
)
from .core import (
    Dataset,
    LevelDifferenceDistribution,
    Number,
    ParameterRangeError,
    QueryRange,
    RcbError,
    ValidationError,
    as_fraction,
)
from .structures import IndexStructure, locate_many

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    lengths: Tuple[float, ...] = ()
    batch_size: int = 500
    threshold: float = 0.001
    max_queries: int = 200_000
    extra_queries: int = 120_000
    seed: int = 0
    # Sample starts over ranks [0, N - s] instead of domain coordinates.
    index_space: bool = False

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValidationError("batch size must be >= 1")
        if not self.threshold > 0:
            raise ValidationError("threshold must be > 0")
        if self.max_queries < 1 or self.extra_queries < 0:
            raise ValidationError("query budgets must be non-negative (max >= 1)")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit in 64 unsigned bits")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["lengths"] = list(self.lengths)
        return d


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def _draw_starts(rng: np.random.Generator, span: Number, s: Number, count: int) -> np.ndarray:
    starts = rng.random(count) * float(span)
    if as_fraction(s) == 1:
        # single-point queries live on the integer grid
        starts = np.floor(starts).astype(np.int64)
    return starts


def sample_starts(domain_size: int, s: Number, count: int, seed: int) -> np.ndarray:
    s = as_fraction(s)
    if s <= 0 or s > domain_size:
        raise ParameterRangeError(f"query length {s} outside (0, {domain_size}]")
    return _draw_starts(make_rng(seed), domain_size - s, s, count)


def sample_queries(dataset: Dataset, s: Number, count: int, seed: int) -> List[QueryRange]:
    """``count`` queries of length ``s`` with starts uniform on ``[0, M - s]``."""
    starts = sample_starts(dataset.domain_size, s, count, seed)
    return [QueryRange(x.item(), s) for x in starts]


def effective_index_length(dataset: Dataset, s_domain: Number) -> int:
    """``floor(s / (M/N))``, at least 1: the query length measured in points."""
    if dataset.count == 0:
        raise ValidationError("empty dataset")
    v = as_fraction(s_domain) * dataset.count / dataset.domain_size
    return max(1, int(v))


def rank_view(structure: IndexStructure) -> IndexStructure:
    """The same nodes with point ranks as coordinates (domain ``[0, N)``)."""
    n = structure.dataset.count
    ranks = Dataset(np.arange(n), n)
    return dataclasses.replace(structure, dataset=ranks, lo=structure.start, hi=structure.stop)


def _l2(a: np.ndarray, b: np.ndarray) -> float:
    size = max(a.size, b.size)
    return float(np.sqrt(np.sum((np.pad(a, (0, size - a.size)) - np.pad(b, (0, size - b.size))) ** 2)))


def _probs(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    return counts / total if total else counts.astype(float)


@dataclass
class ExperimentReport:
    s: float
    s_index: int
    N: int
    M: int
    structures: List[str]
    tree: str
    level_counts: Dict[str, Dict[int, int]]
    ldd_counts: Dict[str, Dict[int, int]]
    fp_tree_counts: Dict[str, np.ndarray]
    fp_dag_counts: Dict[str, np.ndarray]
    root_returns: Dict[str, int]
    trace: List[Tuple[int, str, float]]
    total_queries: int
    stabilized_at: int
    forced_stop: bool
    fits: Dict[str, Optional[FitResult]] = field(default_factory=dict)
    bounds: Dict[str, Optional[BoundReport]] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)

    def level_cdf(self, structure: str) -> Dict[int, float]:
        counts = self.level_counts[structure]
        total = sum(counts.values())
        run, out = 0, {}
        for level in sorted(counts):
            run += counts[level]
            out[level] = run / total
        return out

    def empirical_ldd(self, structure: str) -> LevelDifferenceDistribution:
        return LevelDifferenceDistribution.from_counts(self.ldd_counts[structure])

    def fp_ratios(self, structure: str) -> np.ndarray:
        return self.fp_tree_counts[structure] / self.fp_dag_counts[structure]

    def fp_below_one(self, structure: str) -> int:
        return int(np.count_nonzero(self.fp_tree_counts[structure] < self.fp_dag_counts[structure]))

    def to_json(self) -> dict:
        dags = [name for name in self.structures if name != self.tree]
        return {
            "s": self.s,
            "s_index": self.s_index,
            "N": self.N,
            "M": self.M,
            "structures": self.structures,
            "total_queries": self.total_queries,
            "stabilized_at": self.stabilized_at,
            "forced_stop": self.forced_stop,
            "root_returns": self.root_returns,
            "levels": {n: {str(k): v for k, v in c.items()} for n, c in self.level_counts.items()},
            "level_cdf": {n: {str(k): v for k, v in self.level_cdf(n).items()} for n in self.structures},
            "ldd": {n: self.empirical_ldd(n).to_json() for n in dags},
            "mean_fp_ratio": {n: float(self.fp_ratios(n).mean()) for n in dags},
            "fp_ratio_below_one": {n: self.fp_below_one(n) for n in dags},
            "fits": {n: (f.to_json() if f else None) for n, f in self.fits.items()},
            "bounds": {n: (b.to_json() if b else None) for n, b in self.bounds.items()},
            "notes": self.notes,
        }


def run_stabilized_experiment(
    tree: IndexStructure,
    dags: Sequence[IndexStructure],
    s: Number,
    config: ExperimentConfig,
) -> ExperimentReport:
    """Query in batches until every DAG's empirical LDD settles, then run the extra queries.

    Settled means the L2 distance between the cumulative LDD before and after
    a batch is below ``config.threshold`` for every DAG.  Reaching
    ``config.max_queries`` first sets ``forced_stop`` instead.
    """
    if not tree.config.is_tree:
        raise ValidationError(f"first structure must be the tree, got {tree.name}")
    ds = tree.dataset
    for d in dags:
        if d.dataset is not ds and not (
            d.dataset.domain_size == ds.domain_size and np.array_equal(d.dataset.points, ds.points)
        ):
            raise ValidationError(f"{d.name} was built over a different dataset")
    names = [d.name for d in dags]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate DAG configurations")

    s_index = effective_index_length(ds, s)
    if config.index_space:
        tree, dags = rank_view(tree), [rank_view(d) for d in dags]
        s_query: Number = s_index
    else:
        s_query = s
    M = tree.domain_size
    if as_fraction(s_query) > M:
        raise ParameterRangeError(f"query length {s_query} exceeds the domain size {M}")
    span = M - as_fraction(s_query)

    structs = [tree, *dags]
    level_acc = [np.zeros(st.height + 1, dtype=np.int64) for st in structs]
    ldd_acc = [np.zeros(d.height + 1, dtype=np.int64) for d in dags]
    fp_t: List[List[np.ndarray]] = [[] for _ in dags]
    fp_d: List[List[np.ndarray]] = [[] for _ in dags]
    trace: List[Tuple[int, str, float]] = []
    rng = make_rng(config.seed)

    issued = 0
    batch = 0
    stabilized_at = 0
    forced = False
    phase_target: Optional[int] = None

    def run_batch(count: int) -> None:
        starts = _draw_starts(rng, span, s_query, count)
        t_nodes, t_levels = locate_many(tree, starts, s_query)
        level_acc[0] += np.bincount(t_levels, minlength=level_acc[0].size)
        t_sizes = tree.stop[t_nodes] - tree.start[t_nodes]
        for i, d in enumerate(dags):
            d_nodes, d_levels = locate_many(d, starts, s_query)
            level_acc[i + 1] += np.bincount(d_levels, minlength=level_acc[i + 1].size)
            diff = d_levels - t_levels
            if diff.min() < 0:
                raise RcbError(f"{d.name} returned a shallower level than the tree")
            ldd_acc[i] += np.bincount(diff, minlength=ldd_acc[i].size)
            fp_t[i].append(t_sizes)
            fp_d[i].append(d.stop[d_nodes] - d.start[d_nodes])

    while True:
        size = config.batch_size
        if phase_target is not None:
            size = min(size, phase_target - issued)
            if size <= 0:
                break
        before = [_probs(a) for a in ldd_acc]
        run_batch(size)
        issued += size
        batch += 1
        if phase_target is not None:
            continue
        if batch == 1:
            settled = not dags
        else:
            settled = True
            for name, prev, acc in zip(names, before, ldd_acc):
                dist = _l2(prev, _probs(acc))
                trace.append((batch, name, dist))
                settled &= dist < config.threshold
        if settled or issued >= config.max_queries:
            forced = not settled
            stabilized_at = issued
            phase_target = issued + config.extra_queries
            log.info("s=%s: %s after %d queries", s, "forced stop" if forced else "stabilized", issued)

    report = ExperimentReport(
        s=float(s),
        s_index=s_index,
        N=ds.count,
        M=ds.domain_size,
        structures=[st.name for st in structs],
        tree=tree.name,
        level_counts={st.name: {l: int(v) for l, v in enumerate(acc) if v} for st, acc in zip(structs, level_acc)},
        ldd_counts={name: {k: int(v) for k, v in enumerate(acc) if v} for name, acc in zip(names, ldd_acc)},
        fp_tree_counts={name: np.concatenate(a) for name, a in zip(names, fp_t)},
        fp_dag_counts={name: np.concatenate(a) for name, a in zip(names, fp_d)},
        root_returns={st.name: int(acc[0]) for st, acc in zip(structs, level_acc)},
        trace=trace,
        total_queries=issued,
        stabilized_at=stabilized_at,
        forced_stop=forced,
    )
    for d in dags:
        try:
            check_theory_domain(ds.count, d.config.c)
        except RcbError as exc:
            report.fits[d.name] = report.bounds[d.name] = None
            report.notes.append(f"{d.name}: no fit ({exc})")
            continue
        fit = fit_closest_theoretical(report.empirical_ldd(d.name), ds.count, d.config.c)
        report.fits[d.name] = fit
        report.bounds[d.name] = corollary_bounds(fit, d.config.c, ds.count)
    for name in names:
        below = report.fp_below_one(name)
        if below:
            report.notes.append(f"{name}: {below} queries with tree node smaller than DAG node")
    return report


def _write_csv(path: Path, header: Sequence[str], rows, manifest_id: Optional[str]) -> None:
    with open(path, "w", newline="") as fh:
        if manifest_id:
            fh.write(f"# manifest={manifest_id}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_report(report: ExperimentReport, out_dir: Union[str, Path], manifest_id: Optional[str] = None) -> List[Path]:
    """``report.json`` plus ``levels.csv``, ``ldd.csv``, ``fp.csv`` and ``trace.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out / "levels.csv"
    _write_csv(p, ["structure", "level", "count"],
               ((n, l, c) for n in report.structures for l, c in sorted(report.level_counts[n].items())), manifest_id)
    paths.append(p)
    p = out / "ldd.csv"
    _write_csv(p, ["structure", "k", "count"],
               ((n, k, c) for n, counts in report.ldd_counts.items() for k, c in sorted(counts.items())), manifest_id)
    paths.append(p)

    def fp_rows():
        for n in report.fp_tree_counts:
            t, d = report.fp_tree_counts[n], report.fp_dag_counts[n]
            for i in range(t.size):
                yield n, i, int(t[i]), int(d[i]), repr(float(t[i] / d[i]))

    p = out / "fp.csv"
    _write_csv(p, ["structure", "query", "tree_count", "dag_count", "ratio"], fp_rows(), manifest_id)
    paths.append(p)
    p = out / "trace.csv"
    _write_csv(p, ["batch", "structure", "l2"], ((b, n, repr(v)) for b, n, v in report.trace), manifest_id)
    paths.append(p)
    p = out / "report.json"
    body = report.to_json()
    if manifest_id:
        body["manifest"] = manifest_id
    p.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    paths.append(p)
    return paths


def read_count_csv(path: Union[str, Path], key: str) -> Dict[str, Dict[int, int]]:
    """Parse ``levels.csv`` (key ``level``) or ``ldd.csv`` (key ``k``)."""
    out: Dict[str, Dict[int, int]] = {}
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or not {"structure", key, "count"} <= set(reader.fieldnames):
        raise ValidationError(f"{path}: expected columns structure,{key},count")
    for lineno, row in enumerate(reader, 2):
        try:
            k, c = int(row[key]), int(row["count"])
        except (TypeError, ValueError):
            raise ValidationError(f"{path}: bad row {lineno}: {row}") from None
        if c < 0:
            raise ValidationError(f"{path}: negative count on row {lineno}")
        out.setdefault(row["structure"], {})[k] = out.get(row["structure"], {}).get(k, 0) + c
    return out
