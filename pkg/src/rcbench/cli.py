"""``rcbench`` command line: build, verify, bench, entropy, fit.

Exit codes: 0 success, 1 a verification check failed, 2 bad usage or input.
Every option can also come from a JSON file passed with ``--config``; flags
given on the command line win.  ``RCB_SEED`` sets the default seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from . import __version__
from .analytics import (
    EntropyReport,
    closed_form_fp_ratio,
    closed_form_level_difference,
    check_theory_domain,
    corollary_bounds,
    expected_fp_ratio,
    expected_level_difference,
    fit_closest_theoretical,
    fp_ratio_lower_bound,
    level_difference_bound,
    regime,
    theoretical_ldd,
)
from .core import CapacityError, Dataset, LevelDifferenceDistribution, QueryRange, RcbError
from .experiments import ExperimentConfig, read_count_csv, run_stabilized_experiment, sample_starts, write_report
from .ingest import RawTimestampFile, file_sha256, load_dataset, read_dataset, sidecar_path, synth_uniform
from .oracle import brute_force_src, exact_level_measure
from .structures import (
    build_structure,
    build_tree,
    dump_structure,
    level_histogram,
    payload_size,
    src_search,
)

log = logging.getLogger("rcbench")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ORACLE_MAX_N = 2**13

DEFAULTS = {
    "c": None,
    "format": "plain",
    "column": None,
    "target_count": None,
    "domain_size": None,
    "n_min": 2,
    "n_max": 9,
    "s_policy": "all",
    "batch_size": 500,
    "threshold": 0.001,
    "max_queries": 200_000,
    "extra_queries": 120_000,
    "index_space": False,
    "verify": False,
    "N": None,
    "s": None,
}


class UsageError(RcbError, ValueError):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)
    versions: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)

    @property
    def id(self) -> str:
        body = {k: v for k, v in asdict(self).items() if k != "outputs"}
        return hashlib.sha256(json.dumps(body, sort_keys=True, default=str).encode()).hexdigest()[:16]

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        body = asdict(self)
        body["id"] = self.id
        body["created"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        path.write_text(json.dumps(body, indent=2, sort_keys=True, default=str) + "\n")
        return path


def _versions() -> Dict[str, str]:
    return {"rcbench": __version__, "numpy": np.__version__, "python": platform.python_version()}


@contextmanager
def atomic_dir(target: Path) -> Iterator[Path]:
    """Yield a scratch directory that replaces ``target`` only if the block succeeds."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    old = None
    if target.exists():
        old = target.with_name(f".{target.name}.old-{os.getpid()}")
        target.rename(old)
    tmp.rename(target)
    if old is not None:
        shutil.rmtree(old, ignore_errors=True)


def _default_seed() -> int:
    raw = os.environ.get("RCB_SEED")
    if raw is None:
        return 0
    try:
        return int(raw, 0)
    except ValueError:
        raise UsageError(f"RCB_SEED must be an integer, got {raw!r}") from None


def _resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the JSON config file and explicit flags (in that order)."""
    conf = dict(DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        conf.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for k, v in vars(args).items():
        if v is not None and k not in ("func", "config"):
            conf[k] = v
    if conf.get("seed") is None:
        conf["seed"] = _default_seed()
    return conf


def _load_input(conf: dict) -> Dataset:
    path = Path(conf["input"])
    if not path.exists():
        raise UsageError(f"input file not found: {path}")
    if conf["format"] == "plain" and sidecar_path(path).exists() and conf["target_count"] is None:
        return read_dataset(path)
    raw = RawTimestampFile(path, conf["format"], conf["column"])
    return load_dataset(raw, conf["target_count"], conf["domain_size"])


def _csv_rows(path: Path, header: Sequence[str], rows, manifest_id: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# manifest={manifest_id}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_build(conf: dict) -> int:
    ds = _load_input(conf)
    out = Path(conf["out"])
    manifest = RunManifest("build", _snapshot(conf), conf["seed"], {str(conf["input"]): file_sha256(conf["input"])}, _versions())
    with atomic_dir(out) as tmp:
        level_rows, summary_rows = [], []
        for c in conf["c"] or [2, 3]:
            st = build_structure(ds, int(c))
            dump_structure(st, tmp / f"{st.name}.json")
            manifest.outputs.append(f"{st.name}.json")
            for level, count in level_histogram(st).items():
                level_rows.append((st.name, level, count))
            summary_rows.append((st.name, st.node_count, payload_size(st), st.height, st.clamped_children))
        _csv_rows(tmp / "levels.csv", ["structure", "level", "nodes"], level_rows, manifest.id)
        _csv_rows(tmp / "stats.csv", ["structure", "nodes", "payload", "height", "clamped"], summary_rows, manifest.id)
        manifest.outputs += ["levels.csv", "stats.csv"]
        manifest.write(tmp)
    print(f"dataset N={ds.count} M={ds.domain_size}")
    print(f"{'structure':<10} {'nodes':>9} {'payload':>11} {'height':>6}")
    for name, nodes, payload, height, _ in summary_rows:
        print(f"{name:<10} {nodes:>9} {payload:>11} {height:>6}")
    for name, level, count in level_rows:
        print(f"  {name} level {level}: {count}")
    return EXIT_OK


def _s_values(N: int, policy: str) -> List[int]:
    if policy == "all":
        return list(range(1, N + 1))
    if policy == "pow2":
        return [2**i for i in range(N.bit_length())]
    try:
        vals = [int(v) for v in policy.split(",")]
    except ValueError:
        raise UsageError(f"--s-policy must be 'all', 'pow2' or a comma list of integers, got {policy!r}") from None
    return [v for v in vals if 1 <= v <= N]


def verify_point(N: int, c: int, s: int, tree=None, dag=None) -> dict:
    """Compare closed form and sweep at one grid point and check both bounds."""
    if tree is None:
        ds = synth_uniform(N, N)
        tree, dag = build_tree(ds), build_structure(ds, c)
    theory = theoretical_ldd(N, c, s)
    swept = exact_level_measure(tree, dag, s).distribution
    ek, e2k = expected_level_difference(theory), expected_fp_ratio(theory)
    lb = fp_ratio_lower_bound(N, s)
    checks = {
        "ldd_equal": theory == swept,
        "ek_closed_form": ek == closed_form_level_difference(N, c, s),
        "ek_bound": ek < level_difference_bound(c),
        "e2k_closed_form": e2k == closed_form_fp_ratio(N, c, s),
        # the max{1, kappa/2} floor is stated for s > 1; s = 1 must give exactly 1
        "e2k_bound": e2k == 1 if s == 1 else e2k >= lb,
    }
    return {"N": N, "c": c, "s": s, "regime": regime(N, c, s), "E[k]": ek, "E[2^k]": e2k,
            "fp_lower": lb, "checks": checks, "ok": all(checks.values())}


def cmd_verify(conf: dict) -> int:
    cs = [int(c) for c in conf["c"] or [3, 5, 9]]
    ns = range(int(conf["n_min"]), int(conf["n_max"]) + 1)
    for c in cs:
        check_theory_domain(2, c)
    for n in ns:
        if 2 ** (n + 1) > ORACLE_MAX_N:
            raise CapacityError(f"N=2^{n + 1} exceeds the oracle capacity {ORACLE_MAX_N}")
    rows = []
    failures = 0
    for n in ns:
        N = 2 ** (n + 1)
        ds = synth_uniform(N, N)
        tree = build_tree(ds)
        for c in cs:
            dag = build_structure(ds, c)
            for s in _s_values(N, conf["s_policy"]):
                r = verify_point(N, c, s, tree, dag)
                failures += not r["ok"]
                bad = ",".join(k for k, v in r["checks"].items() if not v)
                print(f"{'PASS' if r['ok'] else 'FAIL'} N={N} c={c} s={s} {r['regime']} "
                      f"E[k]={r['E[k]']} E[2^k]={r['E[2^k]']} fp_lower={r['fp_lower']}" + (f" failed={bad}" if bad else ""))
                rows.append((N, c, s, r["regime"], str(r["E[k]"]), str(r["E[2^k]"]), "PASS" if r["ok"] else "FAIL"))
    if conf.get("out"):
        out = Path(conf["out"])
        manifest = RunManifest("verify", _snapshot(conf), conf["seed"], {}, _versions(), ["verify.csv"])
        with atomic_dir(out) as tmp:
            _csv_rows(tmp / "verify.csv", ["N", "c", "s", "regime", "expected_k", "expected_2k", "result"], rows, manifest.id)
            manifest.write(tmp)
    print(f"{len(rows) - failures}/{len(rows)} grid points passed")
    return EXIT_FAIL if failures else EXIT_OK


def _spot_check(tree, dags, s, seed: int, count: int = 200) -> int:
    starts = sample_starts(tree.domain_size, s, count, seed)
    bad = 0
    for st in (tree, *dags):
        for x in starts:
            q = QueryRange(x.item(), s)
            bad += src_search(st, q).node != brute_force_src(st, q).node
    return bad


def cmd_bench(conf: dict) -> int:
    lengths = conf.get("s") or []
    if not lengths:
        raise UsageError("bench needs at least one query length (--s)")
    ds = _load_input(conf)
    cs = sorted({int(c) for c in conf["c"] or [3, 5]} - {2})
    if not cs:
        raise UsageError("bench needs at least one DAG fanout c >= 3")
    config = ExperimentConfig(
        lengths=tuple(float(v) for v in lengths),
        batch_size=int(conf["batch_size"]),
        threshold=float(conf["threshold"]),
        max_queries=int(conf["max_queries"]),
        extra_queries=int(conf["extra_queries"]),
        seed=int(conf["seed"]),
        index_space=bool(conf["index_space"]),
    )
    tree = build_tree(ds)
    dags = [build_structure(ds, c) for c in cs]
    manifest = RunManifest("bench", _snapshot(conf), config.seed, {str(conf["input"]): file_sha256(conf["input"])}, _versions())
    out = Path(conf["out"])
    failed = False
    with atomic_dir(out) as tmp:
        for s in config.lengths:
            s_val = int(s) if float(s).is_integer() else s
            cell = f"s={s_val}"
            if conf["verify"]:
                bad = _spot_check(tree, dags, s_val, config.seed)
                if bad:
                    print(f"FAIL {cell}: {bad} searches disagree with brute force")
                    failed = True
            report = run_stabilized_experiment(tree, dags, s_val, config)
            paths = write_report(report, tmp / cell, manifest.id)
            manifest.outputs += [str(p.relative_to(tmp)) for p in paths]
            status = "forced stop" if report.forced_stop else "stabilized"
            print(f"{cell} (index length {report.s_index}): {status} at {report.stabilized_at}, "
                  f"{report.total_queries} queries; root returns {report.root_returns}")
            for name, fit in report.fits.items():
                if fit is None:
                    continue
                b = report.bounds[name]
                print(f"  {name}: s*={fit.s_star} eps={fit.epsilon:.6f} kappa*={fit.kappa_star} "
                      f"E[k]={float(b.expected_level_diff):.4f} level bound={b.level_diff_bound:.4f} "
                      f"FP bound={b.fp_ratio_lower_bound:.4f}{' (vacuous)' if b.vacuous_fp_bound else ''}")
            for note in report.notes:
                print(f"  note: {note}")
        manifest.write(tmp)
    return EXIT_FAIL if failed else EXIT_OK


def cmd_entropy(conf: dict) -> int:
    path = Path(conf["report"])
    if not path.exists():
        raise UsageError(f"levels file not found: {path}")
    counts = read_count_csv(path, "level")
    reports = [EntropyReport.from_counts(name, c) for name, c in counts.items()]
    print(f"{'structure':<10} {'entropy_bits':>12} {'support':>7}")
    for r in reports:
        print(f"{r.structure:<10} {r.entropy:>12.6f} {r.support_size:>7}")
    tree = next((r for r in reports if r.structure == "tree"), None)
    if tree is not None:
        for r in reports:
            if r is not tree and not tree.entropy > r.entropy:
                print(f"observed: tree entropy does not exceed {r.structure} entropy")
    return EXIT_OK


def cmd_fit(conf: dict) -> int:
    path = Path(conf["ldd"])
    if not path.exists():
        raise UsageError(f"ldd file not found: {path}")
    if conf["N"] is None:
        raise UsageError("fit needs --N")
    N = int(conf["N"])
    counts = read_count_csv(path, "k")
    for name, c_counts in counts.items():
        if conf.get("c_override"):
            c = int(conf["c_override"])
        else:
            try:
                c = int(name.split("-")[0])
            except ValueError:
                raise UsageError(f"cannot infer c from structure name {name!r}; pass --c") from None
        fit = fit_closest_theoretical(LevelDifferenceDistribution.from_counts(c_counts), N, c)
        b = corollary_bounds(fit, c, N)
        print(f"{name}: s*={fit.s_star} eps={fit.epsilon:.6f} kappa*={fit.kappa_star} "
              f"level bound={b.level_diff_bound:.6f} FP bound={b.fp_ratio_lower_bound:.6f}"
              f"{' (vacuous)' if b.vacuous_fp_bound else ''}")
    return EXIT_OK


def _snapshot(conf: dict) -> dict:
    return {k: v for k, v in sorted(conf.items()) if k != "func"}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rcbench", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with option values; flags override it")
    common.add_argument("--seed", type=int, help="random seed (default: $RCB_SEED or 0)")
    common.add_argument("-v", "--verbose", action="store_true", default=None)
    sub = p.add_subparsers(dest="command", required=True)

    def data_opts(sp):
        sp.add_argument("input", help="timestamp file")
        sp.add_argument("--format", choices=["plain", "csv", "checkin"])
        sp.add_argument("--column", help="csv column index or header name")
        sp.add_argument("--target-count", type=int, help="keep the earliest N distinct timestamps")
        sp.add_argument("--domain-size", type=int, help="override M (default max + 1)")

    b = sub.add_parser("build", parents=[common], help="build structures and write JSON dumps and stats")
    data_opts(b)
    b.add_argument("--c", type=int, nargs="+", help="fanouts; 2 means the 1D-Tree")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build)

    v = sub.add_parser("verify", parents=[common], help="closed forms against the exact sweep")
    v.add_argument("--n-min", type=int)
    v.add_argument("--n-max", type=int)
    v.add_argument("--c", type=int, nargs="+")
    v.add_argument("--s-policy", help="'all', 'pow2' or a comma list")
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("bench", parents=[common], help="stabilized random-query experiment")
    data_opts(e)
    e.add_argument("--c", type=int, nargs="+")
    e.add_argument("--s", type=float, nargs="+", help="query lengths in domain units")
    e.add_argument("--batch-size", type=int)
    e.add_argument("--threshold", type=float)
    e.add_argument("--max-queries", type=int)
    e.add_argument("--extra-queries", type=int)
    e.add_argument("--index-space", action="store_true", default=None)
    e.add_argument("--verify", action="store_true", default=None, help="spot-check searches against brute force")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_bench)

    h = sub.add_parser("entropy", parents=[common], help="Shannon entropy of returned levels")
    h.add_argument("report", help="levels.csv from bench")
    h.set_defaults(func=cmd_entropy)

    f = sub.add_parser("fit", parents=[common], help="fit an ldd.csv to the closest theoretical distribution")
    f.add_argument("ldd", help="ldd.csv from bench")
    f.add_argument("--N", type=int)
    f.add_argument("--c", dest="c_override", type=int, help="fanout (default: from structure names)")
    f.set_defaults(func=cmd_fit)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        conf = _resolve(args)
        return args.func(conf)
    except (RcbError, OSError) as exc:
        print(f"rcbench {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
