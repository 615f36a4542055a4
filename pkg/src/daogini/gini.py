"""Group-wise Gini coefficients over a sorted holder distribution.

The holder list (largest first) is cut into an upper half C and a lower half
D by wallet count; C is then cut again, as a prefix, into E (the few largest
wallets) and F (the rest of C) so that E and F hold roughly equal token mass.

All sums run over Python ints and are divided once at the end. ``int / int``
is correctly rounded, so ``gini`` returns the float nearest the exact
rational value no matter how large the balances are.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass
from fractions import Fraction
from bisect import bisect_left
from itertools import accumulate, islice
from typing import Iterable, Sequence

import numpy as np


class DegenerateDistribution(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class SortedDistribution:
    balances: tuple[int, ...]
    total: int

    def __post_init__(self):
        bs = self.balances
        if bs and bs[-1] <= 0:
            raise DegenerateDistribution("balances must be positive")
        if not all(map(operator.ge, bs, islice(bs, 1, None))):
            raise ValueError("balances must be sorted descending")
        if self.total != sum(bs):
            raise ValueError("total does not match balances")

    @classmethod
    def from_balances(cls, balances: Iterable[int]) -> "SortedDistribution":
        """Canonicalize any iterable of positive ints (order is irrelevant)."""
        bs = tuple(sorted((int(b) for b in balances), reverse=True))
        return cls(bs, sum(bs))

    @classmethod
    def _trusted(cls, balances: tuple, total: int) -> "SortedDistribution":
        # caller guarantees: positive, descending, total == sum(balances)
        dist = object.__new__(cls)
        object.__setattr__(dist, "balances", balances)
        object.__setattr__(dist, "total", total)
        return dist

    @classmethod
    def from_snapshot(cls, snapshot) -> "SortedDistribution":
        # a validated snapshot is already sorted and totalled; zeros still fail here
        bs = tuple(snapshot.balances)
        if bs and bs[-1] <= 0:
            raise DegenerateDistribution("balances must be positive")
        return cls._trusted(bs, snapshot.total_balance)

    @property
    def n(self) -> int:
        return len(self.balances)

    def __len__(self):
        return len(self.balances)

    def slice(self, start: int, stop: int) -> "SortedDistribution":
        part = self.balances[start:stop]
        return SortedDistribution._trusted(part, sum(part))


@dataclass(frozen=True)
class Partition:
    n: int
    c_end: int
    e_end: int

    @property
    def c(self) -> slice:
        return slice(0, self.c_end)

    @property
    def d(self) -> slice:
        return slice(self.c_end, self.n)

    @property
    def e(self) -> slice:
        return slice(0, self.e_end)

    @property
    def f(self) -> slice:
        return slice(self.e_end, self.c_end)


@dataclass(frozen=True)
class GiniBundle:
    g_all: float
    g_c: float
    g_d: float
    g_e: float
    g_f: float

    FIELDS = ("g_all", "g_c", "g_d", "g_e", "g_f")

    def as_tuple(self) -> tuple[float, ...]:
        return (self.g_all, self.g_c, self.g_d, self.g_e, self.g_f)


def _as_dist(dist) -> SortedDistribution:
    if isinstance(dist, SortedDistribution):
        return dist
    return SortedDistribution.from_balances(dist)


def _rank_weighted_sum(desc: Sequence[int]) -> int:
    """sum(i * x_i) over ascending ranks i = 1..n, given balances largest first."""
    return sum(map(operator.mul, range(len(desc), 0, -1), desc))


def gini_fraction(dist) -> Fraction:
    """Exact sorted-rank Gini as a Fraction."""
    dist = _as_dist(dist)
    n, total = dist.n, dist.total
    if n == 0 or total == 0:
        raise DegenerateDistribution("degenerate distribution: no positive balances")
    weighted = _rank_weighted_sum(dist.balances)
    return Fraction(2 * weighted - (n + 1) * total, n * total)


def gini(dist) -> float:
    """Gini coefficient, ``2*sum(i*x_i)/(n*sum x) - (n+1)/n`` with x ascending, i = 1..n.

    Accepts a :class:`SortedDistribution` or any iterable of positive ints.
    """
    dist = _as_dist(dist)
    n, total = dist.n, dist.total
    if n == 0 or total == 0:
        raise DegenerateDistribution("degenerate distribution: no positive balances")
    if n == 1:
        return 0.0
    weighted = _rank_weighted_sum(dist.balances)
    return (2 * weighted - (n + 1) * total) / (n * total)


def _pairwise_abs_sum(xs: Sequence[int]) -> int:
    n = len(xs)
    if n and max(xs) < 2**31 and n <= 4096:
        arr = np.asarray(xs, dtype=np.int64)
        return int(np.abs(arr[:, None] - arr[None, :]).sum())
    return sum(abs(a - b) for a in xs for b in xs)


def gini_pairwise_fraction(dist) -> Fraction:
    """Mean-absolute-difference Gini, ``sum_ij |x_i - x_j| / (2 n^2 mu)``, exact. O(n^2)."""
    xs = list(dist.balances) if isinstance(dist, SortedDistribution) else [int(b) for b in dist]
    n, total = len(xs), sum(xs)
    if n == 0 or total <= 0:
        raise DegenerateDistribution("degenerate distribution: no positive balances")
    # 2 n^2 mu == 2 n total
    return Fraction(_pairwise_abs_sum(xs), 2 * n * total)


def gini_pairwise_oracle(dist) -> float:
    f = gini_pairwise_fraction(dist)
    return f.numerator / f.denominator


def split_equal_count(dist: SortedDistribution) -> int:
    """Return ``c_end``; the odd wallet goes to the upper group C."""
    if dist.n < 2:
        raise SplitError(f"cannot split: need at least 2 wallets, got {dist.n}")
    return (dist.n + 1) // 2


def split_equal_mass(group_c: SortedDistribution) -> int:
    """Return ``e_end``: the prefix cut of C closest to half its mass.

    Candidates are k = 1..|C|-1 so both E and F are non-empty; ties go to
    the smaller k.
    """
    m = group_c.n
    if m < 2:
        raise SplitError(f"cannot sub-split: group C needs at least 2 wallets, got {m}")
    total = group_c.total
    # prefix sums of positive balances increase strictly, so |2*prefix - total|
    # falls then rises; the best cut sits on one side of the crossing point
    prefixes = list(accumulate(group_c.balances[: m - 1]))
    j = bisect_left(prefixes, total, key=lambda p: 2 * p)
    candidates = [k for k in (j, j + 1) if 1 <= k <= m - 1]
    return min(candidates, key=lambda k: (abs(2 * prefixes[k - 1] - total), k))


def partition(dist: SortedDistribution) -> Partition:
    c_end = split_equal_count(dist)
    e_end = split_equal_mass(dist.slice(0, c_end))
    return Partition(dist.n, c_end, e_end)


def compute_bundle(source) -> GiniBundle:
    """All five Gini values for a snapshot, distribution, or balance list."""
    if hasattr(source, "records"):
        dist = SortedDistribution.from_snapshot(source)
    else:
        dist = _as_dist(source)
    if dist.n < 4:
        # n=3 leaves D with one wallet; n<=2 leaves C too small to sub-split into E/F
        failing = "D" if dist.n == 3 else "C (E/F sub-split)"
        raise SplitError(
            f"too few records: need >= 4 positive balances, got {dist.n}; group {failing} too small"
        )
    part = partition(dist)
    return GiniBundle(
        g_all=gini(dist),
        g_c=gini(dist.slice(0, part.c_end)),
        g_d=gini(dist.slice(part.c_end, dist.n)),
        g_e=gini(dist.slice(0, part.e_end)),
        g_f=gini(dist.slice(part.e_end, part.c_end)),
    )
