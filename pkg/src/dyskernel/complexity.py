"""Counting model for feature-correspondence search versus per-pixel labelling.

Registration: each of the N = H·W features picks one of c = α·N − 1 partners,
giving c^N configurations. Segmentation: each pixel picks one of L labels,
giving L^N. All magnitudes are handled as log10.
"""

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple


class EnumerationTooLarge(ValueError):
    """Raised when brute force would exceed the guard; carries the closed-form count."""

    def __init__(self, count: int, max_count: int):
        super().__init__(f"enumeration of {count} configurations exceeds max_count={max_count}")
        self.count = count
        self.max_count = max_count


@dataclass(frozen=True)
class ComplexityScenario:
    H: int
    W: int
    alpha: float = 1.0
    L: int = 2

    def __post_init__(self):
        if self.H < 0 or self.W < 0:
            raise ValueError("grid extents must be non-negative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def N(self) -> int:
        return self.H * self.W

    def candidates(self, include_self: bool = False) -> float:
        c = self.alpha * self.N
        return c if include_self else c - 1


def log_registration_complexity(s: ComplexityScenario, include_self: bool = False) -> float:
    """N·log10(c) with c = αN − 1, or c = αN when ``include_self`` is set."""
    if s.N < 1:
        raise ValueError("registration complexity needs H·W >= 1")
    c = s.candidates(include_self)
    if c < 1:
        raise ValueError(f"candidate count c = {c:g} < 1; the model is undefined here")
    return s.N * math.log10(c)


def log_segmentation_complexity(s: ComplexityScenario) -> float:
    if s.L < 2:
        raise ValueError(f"segmentation needs at least 2 labels, got L={s.L}")
    return s.N * math.log10(s.L)


def complexity_ratio(s: ComplexityScenario, include_self: bool = False) -> float:
    """R = log(c)/log(L); the ratio of the two log-complexities, independent of N's exponent."""
    log_h = log_registration_complexity(s, include_self)
    log_c = log_segmentation_complexity(s)
    return log_h / log_c


def closed_form_count(s: ComplexityScenario, kind: str = "registration", include_self: bool = False) -> int:
    if kind == "registration":
        c = s.candidates(include_self)
        if c != int(c):
            raise ValueError(f"closed-form count needs an integral candidate count, got {c:g}")
        return int(c) ** s.N
    if kind == "segmentation":
        return s.L ** s.N
    raise ValueError(f"unknown kind {kind!r}; expected 'registration' or 'segmentation'")


def enumerate_small(s: ComplexityScenario, max_count: int = 10**6, kind: str = "registration",
                    include_self: bool = False) -> int:
    """Count configurations by listing every per-feature choice."""
    expected = closed_form_count(s, kind, include_self)
    if expected > max_count:
        raise EnumerationTooLarge(expected, max_count)
    choices = int(s.candidates(include_self)) if kind == "registration" else s.L
    return sum(1 for _ in itertools.product(range(choices), repeat=s.N))


def crossover_n(alpha: float, L: int, n_max: int = 10**6) -> Optional[int]:
    """Smallest N with αN − 1 > L, i.e. registration strictly harder than labelling."""
    for n in range(1, n_max + 1):
        if alpha * n - 1 > L:
            return n
    return None


@dataclass
class ReductionReport:
    dynamic: float
    static: float
    ratio: float
    satisfied: bool

    def __str__(self):
        flag = "reduced" if self.satisfied else "NOT reduced"
        return f"|D|·|A| = {self.dynamic:g} vs |U|·|W| = {self.static:g}; ratio {self.ratio:.3f} ({flag})"


def dynamic_reduction_report(static_taps: int, effective_taps: float, static_relations: int,
                             effective_relations: float) -> ReductionReport:
    """Compare effective combinations under dynamic sampling with the static product."""
    values = (static_taps, effective_taps, static_relations, effective_relations)
    if any(v < 0 for v in values):
        raise ValueError(f"counts must be non-negative, got {values}")
    if effective_taps > static_taps or effective_relations > static_relations:
        raise ValueError("effective counts cannot exceed static counts")
    static = float(static_taps * static_relations)
    dynamic = float(effective_taps * effective_relations)
    ratio = dynamic / static if static > 0 else float("nan")
    return ReductionReport(dynamic, static, ratio, dynamic < static)


def sweep(ns: Iterable[int], alpha: float = 1.0, L: int = 4, include_self: bool = False) -> List[Tuple[int, float, float, float]]:
    """Rows (N, log10|H|, log10|C|, R) for 1×N grids."""
    rows = []
    for n in ns:
        s = ComplexityScenario(1, n, alpha, L)
        rows.append((n, log_registration_complexity(s, include_self), log_segmentation_complexity(s),
                     complexity_ratio(s, include_self)))
    return rows
