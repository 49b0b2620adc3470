"""Loading timestamp files into datasets, and synthetic generators."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Optional, Tuple, Union

import numpy as np

from .core import CapacityError, Dataset, ValidationError

FORMATS = ("plain", "csv", "checkin")
_NUMBER = re.compile(r"[+-]?\d+(\.\d*)?([eE][+-]?\d+)?")


class ParseError(ValidationError):
    def __init__(self, path: Union[str, Path], line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class ShortfallError(ValidationError):
    pass


@dataclass(frozen=True)
class RawTimestampFile:
    """A text file of timestamps.

    ``plain``: one value per line.  ``csv``: ``column`` is an index or a header
    name.  ``checkin``: tab separated, ISO-8601 time in ``column`` (default 1,
    the second field of a check-in export).
    """

    path: Union[str, Path]
    format: str = "plain"
    column: Union[int, str, None] = None
    delimiter: Optional[str] = None
    scale: int = 1

    def __post_init__(self) -> None:
        if self.format not in FORMATS:
            raise ValidationError(f"unknown format {self.format!r}; expected one of {FORMATS}")
        if self.scale < 1:
            raise ValidationError("scale must be a positive integer")


def _parse_iso(text: str) -> int:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return math.floor(ts.timestamp())


def _fields(raw: RawTimestampFile, fh) -> Iterator[Tuple[int, str]]:
    if raw.format == "plain":
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if text and not text.startswith("#"):
                yield lineno, text
        return
    delim = raw.delimiter or ("\t" if raw.format == "checkin" else ",")
    column = raw.column if raw.column is not None else (1 if raw.format == "checkin" else 0)
    reader = csv.reader(fh, delimiter=delim)
    if isinstance(column, str) and not column.lstrip("-").isdigit():
        header = next(reader, None)
        if header is None:
            return
        try:
            column = header.index(column)
        except ValueError:
            raise ParseError(raw.path, 1, f"no column named {raw.column!r}") from None
    column = int(column)
    for row in reader:
        lineno = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        try:
            yield lineno, row[column].strip()
        except IndexError:
            raise ParseError(raw.path, lineno, f"row has {len(row)} fields, need column {column}") from None


def parse_timestamps(raw: RawTimestampFile) -> np.ndarray:
    """Raw values as integers (seconds, times ``scale``), in file order."""
    values = []
    kind = None
    with open(raw.path, newline="", encoding="utf-8") as fh:
        for lineno, text in _fields(raw, fh):
            try:
                if _NUMBER.fullmatch(text):
                    number = float(text) if any(ch in text for ch in ".eE") else int(text)
                    this, value = "epoch", round(number * raw.scale)
                else:
                    this, value = "iso", _parse_iso(text) * raw.scale
            except (ValueError, OverflowError) as exc:
                raise ParseError(raw.path, lineno, f"cannot parse {text!r} as a timestamp ({exc})") from None
            if kind is None:
                kind = this
            elif kind != this:
                raise ParseError(raw.path, lineno, "file mixes epoch and ISO-8601 timestamps")
            values.append(value)
    return np.asarray(values, dtype=np.int64)


def load_dataset(
    raw: RawTimestampFile,
    target_count: Optional[int] = None,
    domain_size: Optional[int] = None,
) -> Dataset:
    """Parse, shift to start at 0, sort, deduplicate and keep the earliest ``target_count``."""
    values = parse_timestamps(raw)
    if values.size == 0:
        raise ShortfallError(f"{raw.path}: no timestamps found")
    anchor = int(values.min())
    points = np.unique(values - anchor)
    if target_count is not None:
        if points.size < target_count:
            raise ShortfallError(
                f"{raw.path}: {points.size} distinct timestamps, {target_count} requested"
            )
        points = points[:target_count]
    M = int(points[-1]) + 1 if domain_size is None else int(domain_size)
    return Dataset(points, M, scale=raw.scale, anchor=anchor)


def file_sha256(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_dataset(dataset: Dataset, path: Union[str, Path], source: Union[str, Path, None] = None) -> Path:
    """One integer per line, plus a JSON sidecar with N, M, scale, anchor and the source hash."""
    path = Path(path)
    np.savetxt(path, dataset.points, fmt="%d")
    meta = {
        "N": dataset.count,
        "M": dataset.domain_size,
        "scale": dataset.scale,
        "anchor": dataset.anchor,
        "source": str(source) if source is not None else None,
        "source_sha256": file_sha256(source) if source is not None else None,
        "sha256": file_sha256(path),
    }
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=2) + "\n")
    return side


def read_dataset(path: Union[str, Path]) -> Dataset:
    """Read a dump from :func:`write_dataset`; falls back to a plain load without a sidecar."""
    side = sidecar_path(path)
    if not side.exists():
        return load_dataset(RawTimestampFile(path))
    meta = json.loads(side.read_text())
    points = parse_timestamps(RawTimestampFile(path))
    ds = Dataset(points, int(meta["M"]), scale=int(meta.get("scale", 1)), anchor=int(meta.get("anchor", 0)))
    if ds.count != int(meta["N"]):
        raise ValidationError(f"{path}: sidecar says N={meta['N']}, file has {ds.count}")
    return ds


def synth_uniform(N: int, M: int) -> Dataset:
    """Points ``floor(i*M/N)``, equally spaced over ``[0, M)``."""
    if N < 1:
        raise ValidationError("N must be >= 1")
    if N > M:
        raise CapacityError(f"cannot place {N} distinct points in [0, {M})")
    i = np.arange(N, dtype=object if N * M >= 2**63 else np.int64)
    return Dataset(np.asarray(i * M // N, dtype=np.int64), M)


def synth_clustered(N: int, M: int, clusters: int, spread: float, seed: int) -> Dataset:
    """Mixture of truncated Gaussian bumps; ``spread`` is the bump sigma as a fraction of M.

    Collisions are pushed to the next free integer, and points pushed past
    the domain end are packed back against it, so the result is always N
    distinct points.
    """
    if clusters < 1:
        raise ValidationError("clusters must be >= 1")
    if spread < 0:
        raise ValidationError("spread must be >= 0")
    if N > M:
        raise CapacityError(f"cannot place {N} distinct points in [0, {M})")
    rng = np.random.Generator(np.random.Philox(key=seed))
    centers = rng.uniform(0, M, size=clusters)
    which = rng.integers(0, clusters, size=N)
    sigma = spread * M
    x = centers[which] + sigma * rng.standard_normal(N)
    bad = (x < 0) | (x >= M)
    while bad.any():
        x[bad] = centers[which[bad]] + sigma * rng.standard_normal(int(bad.sum()))
        bad = (x < 0) | (x >= M)
    v = np.sort(np.floor(x).astype(np.int64))
    idx = np.arange(N, dtype=np.int64)
    v = np.maximum.accumulate(v - idx) + idx
    v = np.minimum(v, M - N + idx)
    return Dataset(v, M)
