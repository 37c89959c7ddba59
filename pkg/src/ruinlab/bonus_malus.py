"""Premium scales, level-transition rules and the premium-level Markov chain."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .claims import JointClaimPMF
from .errors import NonHomogeneousChainError, ReducibleChainError, ValidationError


@dataclass(frozen=True)
class PremiumScale:
    """Strictly increasing positive integer premiums ``c_1 < ... < c_l``."""

    levels: tuple[int, ...]

    def __post_init__(self):
        levels = tuple(int(c) for c in self.levels)
        if not levels:
            raise ValidationError("premium scale needs at least one level")
        if any(c < 1 for c in levels):
            raise ValidationError("premium levels must be >= 1")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValidationError("premium levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)

    def __len__(self):
        return len(self.levels)

    def premium(self, i: int) -> int:
        """Premium of 1-based level ``i``."""
        return self.levels[i - 1]

    @property
    def top(self) -> int:
        return self.levels[-1]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=np.int64)


class Principle(enum.Enum):
    """Which claim experience drives the premium level."""

    AGGREGATE_REPORTED = "aggregate_reported"
    AGGREGATE_SETTLED = "aggregate_settled"
    REPORTED_COUNT = "reported_count"
    SETTLED_COUNT = "settled_count"

    @property
    def is_reported(self) -> bool:
        return self in (Principle.AGGREGATE_REPORTED, Principle.REPORTED_COUNT)

    @property
    def is_count(self) -> bool:
        return self in (Principle.REPORTED_COUNT, Principle.SETTLED_COUNT)

    @classmethod
    def parse(cls, value) -> "Principle":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_").replace(" ", "_")
        aliases = {
            "reported_aggregate": "aggregate_reported",
            "settled_aggregate": "aggregate_settled",
            "count_reported": "reported_count",
            "count_settled": "settled_count",
        }
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown principle {value!r}") from None


class RuleSet:
    """Deterministic level-transition rule ``(level, trigger) -> level``.

    Every rule must saturate: there is a trigger value ``saturation`` beyond
    which the destination no longer depends on the trigger.  The recursion
    engine relies on this to collapse unbounded trigger ranges exactly.
    """

    def __init__(
        self,
        n_levels: int,
        fn: Callable[[int, int], int],
        saturation: int,
        kind: str = "custom",
        params: Optional[dict] = None,
    ):
        if n_levels < 1:
            raise ValidationError("rule set needs at least one level")
        if saturation < 0:
            raise ValidationError("saturation must be >= 0")
        self.n_levels = int(n_levels)
        self.saturation = int(saturation)
        self.kind = kind
        self.params = dict(params or {})
        self._fn = fn
        table = np.empty((self.n_levels, self.saturation + 1), dtype=np.int64)
        for i in range(1, self.n_levels + 1):
            for s in range(self.saturation + 1):
                j = int(fn(i, s))
                if not 1 <= j <= self.n_levels:
                    raise ValidationError(f"rule maps ({i}, {s}) outside the scale: {j}")
                table[i - 1, s] = j - 1
        # 0-based destinations, column s clamped at the saturation point
        self._dest = table

    def __repr__(self):
        return f"RuleSet(kind={self.kind!r}, n_levels={self.n_levels}, params={self.params})"

    def __getstate__(self):
        # the destination table fully describes the rule; closures do not pickle
        state = dict(self.__dict__)
        state["_fn"] = None
        return state

    @classmethod
    def threshold(cls, down_max: int, stay_max: int, n_levels: int) -> "RuleSet":
        """Move down for ``s <= down_max``, stay for ``s <= stay_max``, else move up."""
        if not 0 <= down_max <= stay_max:
            raise ValidationError("threshold rule needs 0 <= down_max <= stay_max")

        def fn(i, s):
            if s <= down_max:
                return max(i - 1, 1)
            if s <= stay_max:
                return i
            return min(i + 1, n_levels)

        return cls(n_levels, fn, stay_max + 1, "threshold",
                   {"down_max": down_max, "stay_max": stay_max})

    @classmethod
    def table(cls, entries: Sequence, n_levels: int) -> "RuleSet":
        """Rule from ``(i, s_min, s_max, j)`` entries; ``s_max=None`` means unbounded.

        For every level the ranges must tile ``[0, inf)`` exactly once.
        """
        by_level: dict[int, list[tuple[int, float, int]]] = {i: [] for i in range(1, n_levels + 1)}
        for entry in entries:
            i, lo, hi, j = entry
            i, lo, j = int(i), int(lo), int(j)
            hi = float("inf") if hi is None else int(hi)
            if i not in by_level or not 1 <= j <= n_levels:
                raise ValidationError(f"rule entry {entry} refers to a level outside 1..{n_levels}")
            if lo < 0 or hi < lo:
                raise ValidationError(f"rule entry {entry} has an empty or negative range")
            by_level[i].append((lo, hi, j))
        sat = 0
        for i, ranges in by_level.items():
            ranges.sort()
            expect = 0
            for lo, hi, _ in ranges:
                if lo != expect:
                    raise ValidationError(f"rules for level {i} do not cover trigger {expect} exactly once")
                expect = hi + 1
            if expect != float("inf"):
                raise ValidationError(f"rules for level {i} do not cover all triggers")
            sat = max(sat, ranges[-1][0])

        def fn(i, s):
            for lo, hi, j in by_level[i]:
                if lo <= s <= hi:
                    return j
            raise AssertionError("unreachable: totality checked at load")

        return cls(n_levels, fn, sat, "table", {"entries": [list(e) for e in entries]})

    @classmethod
    def from_config(cls, cfg, n_levels: int) -> "RuleSet":
        kind = cfg.get("kind")
        if kind == "threshold":
            return cls.threshold(int(cfg["down_max"]), int(cfg["stay_max"]), n_levels)
        if kind == "table":
            return cls.table(cfg["entries"], n_levels)
        raise ValidationError(f"unknown rule kind {kind!r}")

    def destination(self, i: int, s: int) -> int:
        return rule_apply(self, i, s)

    def dest_index(self, i0, s) -> np.ndarray:
        """Vectorised 0-based destination for 0-based levels and triggers ``s >= 0``."""
        return self._dest[i0, np.minimum(s, self.saturation)]


def rule_apply(rules: RuleSet, i: int, s: int) -> int:
    """Destination level (1-based) from level ``i`` after trigger ``s``."""
    if not 1 <= i <= rules.n_levels:
        raise ValidationError(f"level {i} outside 1..{rules.n_levels}")
    if s < 0:
        raise ValidationError("trigger must be >= 0")
    return int(rules._dest[i - 1, min(s, rules.saturation)]) + 1


def _trigger_pmf(d: JointClaimPMF, trigger: Principle, s_max: int) -> np.ndarray:
    """P(trigger = s) for s < s_max, with the remaining mass lumped into index s_max."""
    out = np.zeros(s_max + 1)
    if trigger is Principle.REPORTED_COUNT:
        f00 = d.pmf(0, 0)
        fy0 = d.marginal_y(0)
        counts = np.array([f00, fy0 - f00, 1.0 - fy0])
    else:
        F = d.grid(s_max, s_max)
        counts = np.array([np.fliplr(F[: s + 1, : s + 1]).trace() for s in range(s_max + 1)])
    n = min(len(counts), s_max)
    out[:n] = counts[:n]
    out[s_max] = 1.0 - out[:s_max].sum()
    return out


def transition_matrix(d: JointClaimPMF, rules: RuleSet, trigger) -> np.ndarray:
    """One-step premium-level transition matrix for a reported-experience trigger.

    Triggers beyond the rule's saturation point all lead to the same level,
    so their combined mass is one minus the finitely many smaller triggers.
    """
    trigger = Principle.parse(trigger)
    if not trigger.is_reported:
        raise NonHomogeneousChainError(
            f"{trigger.value}: premiums driven by settled claims depend on whether a "
            "by-claim was carried over, so the level process is not time-homogeneous "
            "and has no constant one-step matrix"
        )
    l = rules.n_levels
    sat = rules.saturation
    probs = _trigger_pmf(d, trigger, sat)
    P = np.zeros((l, l))
    for i in range(l):
        np.add.at(P[i], rules._dest[i, : sat + 1], probs)
    return P


def _is_irreducible(P: np.ndarray) -> bool:
    n = P.shape[0]
    adj = (P > 0).astype(np.int64) + np.eye(n, dtype=np.int64)
    reach = adj.copy()
    for _ in range(max(1, int(np.ceil(np.log2(n))) + 1)):
        reach = np.minimum(reach @ reach, 1)
    return bool(reach.all())


def stationary_distribution(P) -> np.ndarray:
    """Unique stationary row vector of an irreducible stochastic matrix."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValidationError("transition matrix must be square")
    if (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0, atol=1e-10):
        raise ValidationError("transition matrix must be row-stochastic")
    if not _is_irreducible(P):
        raise ReducibleChainError("chain is reducible: stationary distribution is not unique")
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    return pi


def expected_premium(pi, scale: PremiumScale) -> float:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (len(scale),):
        raise ValidationError(f"vector of length {pi.size} does not match {len(scale)} levels")
    return float(pi @ scale.as_array())


def level_labels(scale: PremiumScale) -> list[str]:
    return [f"c{i}={c}" for i, c in enumerate(scale.levels, start=1)]


def write_matrix_csv(path, P, scale: PremiumScale, pi=None, fmt="{:.10g}"):
    """Matrix rows (levels ascending) with an optional trailing ``stationary`` row."""
    labels = level_labels(scale)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["from"] + labels)
        for lab, row in zip(labels, P):
            w.writerow([lab] + [fmt.format(v) for v in row])
        if pi is not None:
            w.writerow(["stationary"] + [fmt.format(v) for v in pi])
