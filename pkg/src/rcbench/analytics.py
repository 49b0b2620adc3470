"""Closed-form level-difference distributions, their moments and bounds.

Everything that describes the uniform power-of-two setting is exact
(:class:`fractions.Fraction`).  Fitting and entropy work in floats because
their inputs are empirical.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Dict, Mapping

import numpy as np

from .core import (
    LevelDifferenceDistribution,
    Number,
    ParameterRangeError,
    TheoryDomainError,
    ValidationError,
    as_fraction,
    kappa_of,
    theory_alpha_of,
)

SMALL_S = "small-s"
LARGE_S = "large-s"
UNIT_S = "s=1"
FULL_S = "s=N"

# sup over c of 2(c-2)/(c-1)
LEVEL_BOUND_LIMIT = 2


def _theory_exponent(N: int) -> int:
    """``n`` with ``N == 2**(n+1)``; raises for anything else."""
    if N < 2 or N & (N - 1):
        raise TheoryDomainError(f"N={N} is not of the form 2^(n+1) with n >= 0")
    return N.bit_length() - 2


def check_theory_domain(N: int, c: int) -> int:
    n = _theory_exponent(N)
    if theory_alpha_of(c) is None:
        raise TheoryDomainError(f"c={c} is not of the form 2^alpha + 1")
    return n


def _checked_s(N: int, s: Number) -> Fraction:
    s = as_fraction(s)
    if s < 1 or s > N:
        raise ParameterRangeError(f"query length {s} outside [1, {N}]")
    return s


def regime(N: int, c: int, s: Number) -> str:
    """Which closed form applies: ``s=1``, ``s=N``, ``small-s`` or ``large-s``.

    The small-s band ``2^(n-k) < s <= (c-2)/(c-1) * 2^(n-k+1)`` is empty for
    ``c == 3``.
    """
    n = check_theory_domain(N, c)
    s = _checked_s(N, s)
    if s == 1:
        return UNIT_S
    if s == N:
        return FULL_S
    kappa = kappa_of(N, s)
    if s <= Fraction(c - 2, c - 1) * Fraction(2) ** (n - kappa + 1):
        return SMALL_S
    return LARGE_S


def _pow2(e: int) -> Fraction:
    return Fraction(2) ** e


@lru_cache(maxsize=65536)
def _theoretical_ldd(N: int, c: int, s: Fraction) -> LevelDifferenceDistribution:
    n = check_theory_domain(N, c)
    reg = regime(N, c, s)
    kappa = kappa_of(N, s)
    # s = 1, s = N and every s > N/2 (kappa = 0) put all mass on k = 0.
    if reg in (UNIT_S, FULL_S) or kappa == 0:
        return LevelDifferenceDistribution(kappa, {0: Fraction(1)})
    span = N - s
    mass: Dict[int, Fraction] = {}
    if reg == SMALL_S:
        mass[0] = (N - _pow2(kappa) * s) / span
        for k in range(1, kappa + 1):
            mass[k] = _pow2(kappa - k) * s / span
    else:
        mass[0] = (-(c - 4) * _pow2(n) + (c - 3) * _pow2(kappa - 1) * s) / span
        for k in range(1, kappa):
            mass[k] = ((c - 2) * _pow2(n - k) - (c - 3) * _pow2(kappa - k - 1) * s) / span
        mass[kappa] = ((c - 2) * _pow2(n - kappa + 1) - (c - 2) * s) / span
    return LevelDifferenceDistribution(kappa, mass)


def theoretical_ldd(N: int, c: int, s: Number) -> LevelDifferenceDistribution:
    """Exact level-difference distribution for uniform ``N = 2^(n+1)``, ``c = 2^alpha + 1``."""
    check_theory_domain(N, c)
    return _theoretical_ldd(N, c, _checked_s(N, s))


def expected_level_difference(dist: LevelDifferenceDistribution) -> Fraction:
    return sum((k * p for k, p in dist.mass.items()), Fraction(0))


def expected_fp_ratio(dist: LevelDifferenceDistribution) -> Fraction:
    """``E[2^k]``: expected ratio of tree-node to DAG-node size."""
    return sum((2**k * p for k, p in dist.mass.items()), Fraction(0))


def closed_form_level_difference(N: int, c: int, s: Number) -> Fraction:
    """``E[k]`` from the regime formulas, without building the distribution."""
    n = check_theory_domain(N, c)
    s = _checked_s(N, s)
    reg = regime(N, c, s)
    if reg in (UNIT_S, FULL_S):
        return Fraction(0)
    kappa = kappa_of(N, s)
    span = N - s
    if reg == SMALL_S:
        return s * (2 ** (kappa + 1) - kappa - 2) / span
    return ((c - 2) * _pow2(n - kappa + 1) * (2**kappa - 1) + s * ((3 - c) * (2**kappa - 1) - kappa)) / span


def closed_form_fp_ratio(N: int, c: int, s: Number) -> Fraction:
    """``E[2^k]`` from the regime formulas."""
    n = check_theory_domain(N, c)
    s = _checked_s(N, s)
    reg = regime(N, c, s)
    if reg in (UNIT_S, FULL_S):
        return Fraction(1)
    kappa = kappa_of(N, s)
    span = N - s
    if reg == SMALL_S:
        return (N + (kappa - 1) * 2**kappa * s) / span
    return (((c - 2) * kappa + 2) * _pow2(n) - ((c - 3) * kappa + 2) * _pow2(kappa - 1) * s) / span


def level_difference_bound(c: int) -> Fraction:
    """Strict upper bound ``2(c-2)/(c-1)`` on the expected level difference."""
    if c < 3:
        raise ParameterRangeError(f"bound needs c >= 3, got {c}")
    return Fraction(2 * (c - 2), c - 1)


def fp_ratio_lower_bound(N: int, s: Number) -> Fraction:
    """``max(1, kappa/2)``."""
    return max(Fraction(1), Fraction(kappa_of(N, s), 2))


def l2_distance(d1: LevelDifferenceDistribution, d2: LevelDifferenceDistribution) -> float:
    keys = set(d1.mass) | set(d2.mass)
    total = sum(((d1.get(k) - d2.get(k)) ** 2 for k in keys), Fraction(0))
    return math.sqrt(total)


@dataclass(frozen=True)
class FitResult:
    s_star: int
    epsilon: float
    kappa_star: int

    def to_json(self) -> dict:
        return asdict(self)


def _band_masses(N: int, c: int, kappa: int, s: np.ndarray) -> np.ndarray:
    """Float masses for all ``s`` of one kappa band, shape ``(len(s), kappa+1)``."""
    n = N.bit_length() - 2
    span = N - s
    out = np.zeros((s.size, kappa + 1))
    small = s <= (c - 2) / (c - 1) * 2.0 ** (n - kappa + 1)
    ks = np.arange(1, kappa + 1)
    # small-s
    out[small, 0] = (N - 2.0**kappa * s[small]) / span[small]
    out[np.ix_(small, ks)] = 2.0 ** (kappa - ks)[None, :] * s[small, None] / span[small, None]
    # large-s
    lg = ~small
    sl, spl = s[lg], span[lg]
    out[lg, 0] = (-(c - 4) * 2.0**n + (c - 3) * 2.0 ** (kappa - 1) * sl) / spl
    mid = ks[:-1]
    out[np.ix_(lg, mid)] = (
        (c - 2) * 2.0 ** (n - mid)[None, :] - (c - 3) * 2.0 ** (kappa - mid - 1)[None, :] * sl[:, None]
    ) / spl[:, None]
    out[lg, kappa] = ((c - 2) * 2.0 ** (n - kappa + 1) - (c - 2) * sl) / spl
    return out


def fit_closest_theoretical(empirical: LevelDifferenceDistribution, N: int, c: int) -> FitResult:
    """Integer ``s*`` in ``1..N`` whose theoretical distribution is L2-closest.

    Candidates are screened in floating point one kappa band at a time;
    everything within a small margin of the best is then re-ranked exactly,
    smaller ``s*`` winning ties.
    """
    n = check_theory_domain(N, c)
    kmax = n + 1
    emp = np.zeros(max(kmax, empirical.kappa) + 1)
    for k, p in empirical.mass.items():
        emp[k] = float(p)
    # s = 1 and every kappa-0 length give the point mass at 0.
    cand_s = [np.array([1.0])]
    point = np.zeros_like(emp)
    point[0] = 1.0
    cand_d = [np.array([math.sqrt(((emp - point) ** 2).sum())])]
    for kappa in range(1, kmax + 1):
        lo = N // 2 ** (kappa + 1) + 1  # smallest s with kappa_of(N, s) == kappa
        hi = N // 2**kappa
        lo = max(lo, 2)
        if lo > hi:
            continue
        s = np.arange(lo, hi + 1, dtype=np.float64)
        m = _band_masses(N, c, kappa, s)
        diff = emp[None, :].copy().repeat(s.size, axis=0)
        diff[:, : kappa + 1] -= m
        cand_s.append(s)
        cand_d.append(np.sqrt((diff**2).sum(axis=1)))
    all_s = np.concatenate(cand_s)
    all_d = np.concatenate(cand_d)
    best = all_d.min()
    near = np.sort(all_s[all_d <= best + 1e-9 * max(1.0, best) + 1e-12].astype(np.int64))
    scored = [(l2_distance(empirical, theoretical_ldd(N, c, int(x))), int(x)) for x in near]
    eps, s_star = min(scored)
    return FitResult(s_star, eps, kappa_of(N, s_star))


@dataclass(frozen=True)
class BoundReport:
    """Expected moments at ``s*`` next to the (possibly ε-relaxed) bounds."""

    N: int
    c: int
    s: Fraction
    kappa: int
    regime: str
    epsilon: float
    expected_level_diff: Fraction
    level_diff_bound: float
    expected_fp_ratio: Fraction
    fp_ratio_lower_bound: float
    vacuous_fp_bound: bool = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "vacuous_fp_bound", self.fp_ratio_lower_bound <= 0)

    @property
    def level_bound_holds(self) -> bool:
        return self.expected_level_diff < self.level_diff_bound

    @property
    def fp_bound_holds(self) -> bool:
        return self.expected_fp_ratio >= self.fp_ratio_lower_bound

    def to_json(self) -> dict:
        def frac(x: Fraction) -> dict:
            return {"numerator": x.numerator, "denominator": x.denominator, "float": float(x)}

        return {
            "N": self.N,
            "c": self.c,
            "s": frac(self.s),
            "kappa": self.kappa,
            "regime": self.regime,
            "epsilon": self.epsilon,
            "expected_level_diff": frac(self.expected_level_diff),
            "level_diff_bound": self.level_diff_bound,
            "expected_fp_ratio": frac(self.expected_fp_ratio),
            "fp_ratio_lower_bound": self.fp_ratio_lower_bound,
            "vacuous_fp_bound": self.vacuous_fp_bound,
            "level_bound_holds": self.level_bound_holds,
            "fp_bound_holds": self.fp_bound_holds,
        }


def bound_report(N: int, c: int, s: Number, epsilon: float = 0.0) -> BoundReport:
    """Moments of the theoretical distribution at ``s`` with bounds relaxed by ``epsilon``.

    With ``epsilon == 0`` the FP bound is the unrelaxed ``max(1, kappa/2)``.
    """
    s = _checked_s(N, s)
    dist = theoretical_ldd(N, c, s)
    kappa = kappa_of(N, s)
    if epsilon:
        fp_lb = float(fp_ratio_lower_bound(N, s)) - 2.0 ** (epsilon * kappa)
    else:
        fp_lb = float(fp_ratio_lower_bound(N, s))
    return BoundReport(
        N=N,
        c=c,
        s=s,
        kappa=kappa,
        regime=regime(N, c, s),
        epsilon=float(epsilon),
        expected_level_diff=expected_level_difference(dist),
        level_diff_bound=float(level_difference_bound(c)) + epsilon * kappa,
        expected_fp_ratio=expected_fp_ratio(dist),
        fp_ratio_lower_bound=fp_lb,
    )


def corollary_bounds(fit: FitResult, c: int, N: int) -> BoundReport:
    """Skewed-data bounds at the fitted ``s*``.

    Level bound ``2(c-2)/(c-1) + eps*kappa``; FP bound
    ``max(1, kappa/2) - 2^(eps*kappa)``.  The latter is kept raw even when it
    drops to zero or below, and flagged as vacuous.
    """
    s = Fraction(fit.s_star)
    dist = theoretical_ldd(N, c, s)
    kappa = fit.kappa_star
    eps = float(fit.epsilon)
    return BoundReport(
        N=N,
        c=c,
        s=s,
        kappa=kappa,
        regime=regime(N, c, s),
        epsilon=eps,
        expected_level_diff=expected_level_difference(dist),
        level_diff_bound=float(level_difference_bound(c)) + eps * kappa,
        expected_fp_ratio=expected_fp_ratio(dist),
        fp_ratio_lower_bound=max(1.0, kappa / 2) - 2.0 ** (eps * kappa),
    )


def shannon_entropy(level_probs: Mapping[int, Number]) -> float:
    """Entropy in bits over the nonzero masses."""
    probs = [float(p) for p in level_probs.values()]
    if any(p < 0 for p in probs):
        raise ValidationError("negative probability")
    if abs(sum(probs) - 1.0) > 1e-9:
        raise ValidationError(f"probabilities sum to {sum(probs)!r}, not 1")
    h = -sum(p * math.log2(p) for p in probs if p > 0)
    return h if h > 0 else 0.0


@dataclass(frozen=True)
class EntropyReport:
    structure: str
    level_probs: Dict[int, float]
    entropy: float

    @property
    def support_size(self) -> int:
        return sum(1 for p in self.level_probs.values() if p > 0)

    @classmethod
    def from_counts(cls, structure: str, counts: Mapping[int, int]) -> "EntropyReport":
        total = sum(counts.values())
        if total <= 0:
            raise ValidationError(f"{structure}: no observations")
        probs = {int(k): v / total for k, v in sorted(counts.items())}
        return cls(structure, probs, shannon_entropy(probs))

    def to_json(self) -> dict:
        return {
            "structure": self.structure,
            "entropy_bits": self.entropy,
            "support_size": self.support_size,
            "level_probs": {str(k): p for k, p in self.level_probs.items()},
        }
