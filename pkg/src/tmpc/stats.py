"""Summary statistics for trial batches."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .errors import ConfigError

EXACT_LIMIT = 20


@dataclass(frozen=True)
class MannWhitneyResult:
    u: float
    p_value: float
    method: str


def _exact_null(ranks2, n_a):
    """Null distribution of the rank sum of ``n_a`` items drawn from ``ranks2``.

    Ranks are doubled so tied midranks stay integral; returns a dict
    {doubled rank sum: count}.
    """
    # dp[j] maps rank sum -> number of subsets of size j
    dp = [dict() for _ in range(n_a + 1)]
    dp[0][0] = 1
    for r in ranks2:
        for j in range(n_a, 0, -1):
            prev = dp[j - 1]
            cur = dp[j]
            for s, c in prev.items():
                cur[s + r] = cur.get(s + r, 0) + c
    return dp[n_a]


def mann_whitney_u(a, b) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test.

    Exact permutation distribution (ties handled through midranks) when the
    pooled size is at most 20; normal approximation with tie correction
    otherwise.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ConfigError("Mann-Whitney input invalid", ["both samples must be non-empty"])
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ConfigError("Mann-Whitney input invalid", ["samples must be finite"])
    n_a, n_b = a.size, b.size
    ranks = rankdata(np.concatenate([a, b]))
    r_a = ranks[:n_a].sum()
    u_a = r_a - n_a * (n_a + 1) / 2
    mean_u = n_a * n_b / 2
    if n_a + n_b <= EXACT_LIMIT:
        ranks2 = [int(round(2 * r)) for r in ranks]
        null = _exact_null(ranks2, n_a)
        total = sum(null.values())
        centre2 = n_a * (n_a + n_b + 1)  # twice the expected rank sum
        obs = abs(int(round(2 * r_a)) - centre2)
        hits = sum(c for s, c in null.items() if abs(s - centre2) >= obs)
        return MannWhitneyResult(float(u_a), float(min(Fraction(hits, total), 1)), "exact")
    n = n_a + n_b
    _, counts = np.unique(ranks, return_counts=True)
    tie = float(np.sum(counts ** 3 - counts))
    var = n_a * n_b / 12 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return MannWhitneyResult(float(u_a), 1.0, "normal")
    z = (abs(u_a - mean_u) - 0.5) / math.sqrt(var)
    p = 2 * ndtr(-max(z, 0.0))
    return MannWhitneyResult(float(u_a), float(min(p, 1.0)), "normal")


@dataclass(frozen=True)
class Proportion:
    k: int
    n: int

    @property
    def p(self) -> float:
        return self.k / self.n

    @property
    def se(self) -> float:
        p = self.p
        return math.sqrt(p * (1 - p) / self.n)

    def __str__(self):
        return f"{self.p:.3f} +/- {self.se:.3f} ({self.k}/{self.n})"


def stat_summary(outcomes, categories) -> dict:
    """Proportion and standard error for each category in ``categories``."""
    outcomes = list(outcomes)
    if not outcomes:
        raise ConfigError("summary input invalid", ["at least one outcome is required"])
    unknown = sorted(set(outcomes) - set(categories))
    if unknown:
        raise ConfigError("summary input invalid", [f"unknown outcome {u!r}" for u in unknown])
    return {c: Proportion(sum(o == c for o in outcomes), len(outcomes)) for c in categories}
