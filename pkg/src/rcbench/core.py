"""Shared domain types for range-cover structures and level-difference analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational, Real
from typing import Dict, Iterable, Mapping, Optional, Union

import numpy as np

Number = Union[int, float, Fraction]
Probability = Fraction


class RcbError(Exception):
    """Base class for all errors raised by this package."""


class ParameterRangeError(RcbError, ValueError):
    pass


class TheoryDomainError(RcbError, ValueError):
    """Closed forms only hold for N = 2^(n+1) and c = 2^alpha + 1."""


class ConstructionError(RcbError, ValueError):
    pass


class ConfigurationError(RcbError, ValueError):
    pass


class DomainError(RcbError, ValueError):
    """Query does not lie inside the structure's domain."""


class ValidationError(RcbError, ValueError):
    pass


class CapacityError(RcbError, ValueError):
    pass


def as_fraction(value: Number) -> Fraction:
    """Exact rational view of ``value``; floats convert without rounding."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, Rational):
        return Fraction(value.numerator, value.denominator)
    if isinstance(value, (Real, np.floating)):
        if not math.isfinite(value):
            raise ParameterRangeError(f"non-finite value {value!r}")
        return Fraction(float(value))
    raise TypeError(f"expected a real number, got {type(value).__name__}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Sorted, deduplicated integer points over the domain ``[0, domain_size)``.

    ``scale`` is the factor applied to real-valued raw inputs before rounding
    and ``anchor`` the raw value mapped to coordinate 0.
    """

    points: np.ndarray
    domain_size: int
    scale: int = 1
    anchor: int = 0

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.int64, copy=True).reshape(-1)
        if pts.size and (pts[0] < 0 or pts[-1] >= self.domain_size):
            raise ValidationError(
                f"points must lie in [0, {self.domain_size}), got [{pts[0]}, {pts[-1]}]"
            )
        if pts.size > 1 and not np.all(np.diff(pts) > 0):
            raise ValidationError("points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "domain_size", int(self.domain_size))

    @classmethod
    def from_points(cls, points: Iterable[int], domain_size: Optional[int] = None) -> "Dataset":
        pts = np.unique(np.asarray(list(points), dtype=np.int64))
        if domain_size is None:
            domain_size = int(pts[-1]) + 1 if pts.size else 1
        return cls(pts, domain_size)

    @property
    def count(self) -> int:
        return int(self.points.size)

    def __len__(self) -> int:
        return self.count

    def __repr__(self) -> str:
        return f"Dataset(N={self.count}, M={self.domain_size})"


@dataclass(frozen=True)
class QueryRange:
    """Half-open query ``[start, start + length)``."""

    start: Number
    length: Number

    def __post_init__(self) -> None:
        if self.start < 0:
            raise ParameterRangeError(f"query start must be >= 0, got {self.start}")
        if self.length <= 0:
            raise ParameterRangeError(f"query length must be > 0, got {self.length}")

    @property
    def stop(self) -> Number:
        return self.start + self.length

    def check_within(self, domain_size: int) -> None:
        if self.stop > domain_size:
            raise DomainError(
                f"query [{self.start}, {self.stop}) exceeds domain [0, {domain_size})"
            )


@dataclass(frozen=True)
class Interval:
    lo: Number
    hi: Number

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise ValidationError(f"empty interval [{self.lo}, {self.hi})")

    def contains(self, query: QueryRange) -> bool:
        return self.lo <= query.start and query.stop <= self.hi

    def covers(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    @property
    def length(self) -> Number:
        return self.hi - self.lo


@dataclass(frozen=True)
class NodeRecord:
    id: int
    level: int
    interval: Interval
    point_count: int
    point_offset: int
    children: tuple = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class DagConfig:
    """Branching factor ``c``; ``c == 2`` is the plain 1D-Tree."""

    c: int
    theory_alpha: Optional[int] = None

    def __post_init__(self) -> None:
        if self.c < 2:
            raise ConfigurationError(f"branching factor must be >= 2, got {self.c}")
        if self.theory_alpha is not None:
            if self.theory_alpha < 1 or self.c != 2 ** self.theory_alpha + 1:
                raise ConfigurationError(
                    f"c={self.c} is not 2^alpha + 1 for alpha={self.theory_alpha}"
                )

    @classmethod
    def for_alpha(cls, alpha: int) -> "DagConfig":
        return cls(2 ** alpha + 1, alpha)

    @property
    def is_tree(self) -> bool:
        return self.c == 2

    @property
    def name(self) -> str:
        return "tree" if self.is_tree else f"{self.c}-dag"


def theory_alpha_of(c: int) -> Optional[int]:
    """``alpha`` with ``c == 2**alpha + 1``, or None."""
    m = c - 1
    if m >= 2 and m & (m - 1) == 0:
        return m.bit_length() - 1
    return None


@dataclass(frozen=True, eq=False)
class LevelDifferenceDistribution:
    """Exact probability mass over level differences ``0..kappa``.

    Equality compares the nonzero masses only, so a distribution that lists an
    explicit zero at ``kappa`` equals one that omits it.
    """

    kappa: int
    mass: Mapping[int, Fraction] = field(default_factory=dict)

    def __post_init__(self) -> None:
        mass: Dict[int, Fraction] = {}
        for k, p in sorted(self.mass.items()):
            k = int(k)
            p = as_fraction(p)
            if not 0 <= k <= self.kappa:
                raise ValidationError(f"level difference {k} outside 0..{self.kappa}")
            if p < 0:
                raise ValidationError(f"negative mass {p} at k={k}")
            mass[k] = p
        if sum(mass.values(), Fraction(0)) != 1:
            raise ValidationError(f"masses sum to {sum(mass.values())}, not 1")
        object.__setattr__(self, "mass", mass)

    @classmethod
    def from_counts(cls, counts: Mapping[int, int], kappa: Optional[int] = None) -> "LevelDifferenceDistribution":
        total = sum(counts.values())
        if total <= 0:
            raise ValidationError("cannot build a distribution from zero observations")
        kmax = max(k for k, v in counts.items() if v) if kappa is None else kappa
        return cls(kmax, {k: Fraction(v, total) for k, v in counts.items() if v})

    @classmethod
    def point_mass(cls, k: int = 0) -> "LevelDifferenceDistribution":
        return cls(k, {k: Fraction(1)})

    def __getitem__(self, k: int) -> Fraction:
        return self.mass[k]

    def get(self, k: int) -> Fraction:
        return self.mass.get(k, Fraction(0))

    def support(self) -> Dict[int, Fraction]:
        return {k: p for k, p in self.mass.items() if p}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LevelDifferenceDistribution):
            return NotImplemented
        return self.support() == other.support()

    def __hash__(self) -> int:
        return hash(tuple(sorted(self.support().items())))

    def as_floats(self) -> Dict[int, float]:
        return {k: float(p) for k, p in self.mass.items()}

    def to_json(self) -> dict:
        return {
            "kappa": self.kappa,
            "mass": [
                {"k": k, "numerator": p.numerator, "denominator": p.denominator, "float": float(p)}
                for k, p in self.mass.items()
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LevelDifferenceDistribution":
        return cls(obj["kappa"], {e["k"]: Fraction(e["numerator"], e["denominator"]) for e in obj["mass"]})


def kappa_of(N: int, s: Number) -> int:
    """Largest ``kappa`` with ``2**kappa * s <= N``, computed without logarithms."""
    if N < 1:
        raise ParameterRangeError(f"N must be >= 1, got {N}")
    s = as_fraction(s)
    if s < 1 or s > N:
        raise ParameterRangeError(f"query length {s} outside [1, {N}]")
    # 2^k <= N/s  <=>  2^k <= floor(N/s) for integer k.
    q = N * s.denominator // s.numerator
    return q.bit_length() - 1
