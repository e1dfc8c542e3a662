"""2^K factorial contrast structure and stratified random assignment.

Arms are ordered so that the level vector enumerates {+1, -1}^K with the
last factor varying fastest and +1 before -1.  For K = 3 the main-effect
rows are therefore

    factor 1: + + + + - - - -
    factor 2: + + - - + + - -
    factor 3: + - + - + - + -

Effect rows are the K main effects followed by interactions, ordered by
subset size and then lexicographically.  Inside the Python API arms are
0-based column indices of ``G``; files use 1..Q.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import DomainError
from .numerics import make_rng, stratum_seed

MAX_FACTORS = 16


@dataclass(frozen=True)
class FactorialDesign:
    K: int
    G: np.ndarray = field(repr=False)
    levels: np.ndarray = field(repr=False)
    effect_subsets: tuple = field(repr=False)

    @property
    def Q(self):
        return 2 ** self.K

    @property
    def F(self):
        return self.Q - 1

    @property
    def scale(self):
        """The 2^{-(K-1)} factor in front of every contrast."""
        return 2.0 ** (-(self.K - 1))

    @property
    def effect_labels(self):
        return [effect_label(s) for s in self.effect_subsets]

    @property
    def main_effects(self):
        return list(range(self.K))

    def d(self, q):
        """Column q of G: the sign of every effect at arm q."""
        return self.G[:, q]

    def contrast(self, arm_values):
        """2^{-(K-1)} G v for a length-Q vector (or Q x ... array) of arm values."""
        return self.scale * (self.G @ np.asarray(arm_values, dtype=float))

    def arm_of_levels(self, levels):
        """Arm index for a length-K vector of +/-1 factor levels."""
        levels = np.asarray(levels)
        if levels.shape != (self.K,) or not np.all(np.isin(levels, (-1, 1))):
            raise DomainError(f"expected {self.K} levels in {{-1, +1}}, got {levels.tolist()}")
        bits = (levels == -1).astype(int)
        return int(bits @ (1 << np.arange(self.K - 1, -1, -1)))


def effect_label(subset):
    return "x".join(f"F{k + 1}" for k in subset)


def build_design(K):
    """Contrast matrix and arm ordering for a 2^K design (1 <= K <= 16)."""
    if isinstance(K, bool) or int(K) != K or not 1 <= K <= MAX_FACTORS:
        raise DomainError(f"K must be an integer in [1, {MAX_FACTORS}], got {K!r}")
    K = int(K)
    Q = 2 ** K
    q = np.arange(Q)
    # bit (K-1-k) of q set -> factor k at level -1
    levels = np.empty((Q, K), dtype=np.int8)
    for k in range(K):
        levels[:, k] = np.where((q >> (K - 1 - k)) & 1, -1, 1)
    subsets = [s for size in range(1, K + 1) for s in combinations(range(K), size)]
    G = np.empty((len(subsets), Q), dtype=np.int8)
    for f, s in enumerate(subsets):
        G[f] = np.prod(levels[:, list(s)], axis=1)
    G.setflags(write=False)
    levels.setflags(write=False)
    return FactorialDesign(K=K, G=G, levels=levels, effect_subsets=tuple(subsets))


@dataclass(frozen=True)
class StratumPlan:
    stratum_id: object
    counts: tuple

    @property
    def size(self):
        return sum(self.counts)


@dataclass(frozen=True)
class AssignmentPlan:
    """Per-stratum arm counts plus the seed that drives the shuffle."""

    strata: tuple
    seed: int

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        seen = set()
        for s in self.strata:
            if s.stratum_id in seen:
                raise DomainError(f"duplicate stratum id {s.stratum_id!r}")
            seen.add(s.stratum_id)
            if any(int(c) < 1 for c in s.counts):
                raise DomainError(f"stratum {s.stratum_id!r}: every arm needs at least one unit, got {list(s.counts)}")
        if len({len(s.counts) for s in self.strata}) > 1:
            raise DomainError("all strata must list the same number of arms")

    @classmethod
    def from_counts(cls, counts, seed, stratum_ids=None, sizes=None):
        """Build a plan from an (M, Q) count array; ``sizes`` is checked if given."""
        counts = np.asarray(counts, dtype=int)
        if counts.ndim != 2:
            raise DomainError("counts must be an (M, Q) array")
        if stratum_ids is None:
            stratum_ids = list(range(1, counts.shape[0] + 1))
        if sizes is not None:
            for sid, n, row in zip(stratum_ids, sizes, counts):
                if int(n) != int(row.sum()):
                    raise DomainError(f"stratum {sid!r}: arm counts sum to {int(row.sum())}, size is {int(n)}")
        strata = tuple(StratumPlan(sid, tuple(int(c) for c in row)) for sid, row in zip(stratum_ids, counts))
        return cls(strata=strata, seed=int(seed))

    @property
    def counts(self):
        return np.array([s.counts for s in self.strata], dtype=int)

    @property
    def n(self):
        return int(sum(s.size for s in self.strata))


def assign_stratum(counts, seed):
    """Uniform arrangement of the arm multiset given by ``counts`` (Fisher-Yates)."""
    labels = np.repeat(np.arange(len(counts)), counts)
    return make_rng(seed).permutation(labels)


def assign_treatments(plan):
    """Arm index for every unit, strata laid out consecutively in plan order.

    Each stratum shuffles with its own substream ``seed XOR hash(stratum id)``
    so its assignment does not depend on the other strata.
    """
    parts = [assign_stratum(s.counts, stratum_seed(plan.seed, s.stratum_id)) for s in plan.strata]
    if not parts:
        return np.zeros(0, dtype=int)
    return np.concatenate(parts)
