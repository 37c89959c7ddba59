"""Independent checks of the recursion engine.

``simulate`` runs the surplus process forward path by path; ``exact_enumerate``
sums path probabilities over the whole outcome tree of a finite-support
distribution.  Neither shares code with the backward recursion: both only
use the period mechanics (premium in, claims settled, level moved).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bonus_malus import Principle, rule_apply
from .errors import EnumerationBudgetError, ValidationError
from .ruin_engine import RuinQuery

CHUNK_PATHS = 1 << 16
RNG_ID = f"numpy-{np.__version__}/PCG64+SeedSequence(seed, spawn_key=(chunk,))/chunk={CHUNK_PATHS}"


@dataclass
class SimState:
    """Surplus, current level and the by-claim pending from the previous period (0 = none)."""

    surplus: int
    level: int
    pending_by_claim: int = 0


def settle_period(state: SimState, x: int, y: int, delayed: bool, premium: int):
    """Apply one period: returns ``(settled_amount, new_surplus, new_pending)``."""
    settled = x + (0 if delayed else y) + state.pending_by_claim
    return settled, state.surplus + premium - settled, (y if delayed else 0)


def trigger_value(principle: Principle, x: int, y: int, delayed: bool, pending: int) -> int:
    """Claim experience fed to the premium rule for one period."""
    if principle is Principle.AGGREGATE_REPORTED:
        return x + y
    if principle is Principle.AGGREGATE_SETTLED:
        return x + (0 if delayed else y) + pending
    if principle is Principle.REPORTED_COUNT:
        return int(x > 0) + int(y > 0)
    return int(x > 0) + int(y > 0 and not delayed) + int(pending > 0)


@dataclass
class MCEstimate:
    p_hat: float
    stderr: float
    n_paths: int
    ci95: tuple[float, float]
    seed: int
    rng_id: str = RNG_ID
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_count(cls, hits: int, n_paths: int, seed: int, **meta) -> "MCEstimate":
        p = hits / n_paths
        se = math.sqrt(p * (1 - p) / n_paths)
        ci = (max(0.0, p - 1.96 * se), min(1.0, p + 1.96 * se))
        return cls(p, se, n_paths, ci, seed, RNG_ID, meta)

    def as_dict(self) -> dict:
        return {
            "p_hat": self.p_hat,
            "stderr": self.stderr,
            "ci95": list(self.ci95),
            "n_paths": self.n_paths,
            "seed": self.seed,
            "rng_id": self.rng_id,
        }


class _Sampler:
    """Inverse-CDF sampler over the flattened cutoff box of a joint p.m.f.

    Mass outside the box is added to the last cell, recorded as ``overflow``.
    """

    def __init__(self, dist):
        nx, ny = dist.x_cutoff, dist.y_cutoff
        F = dist.grid(nx, ny)
        self.nx, self.ny = nx, ny
        flat = F.ravel()
        self.overflow = max(0.0, 1.0 - flat.sum())
        cdf = np.cumsum(flat)
        cdf /= cdf[-1]
        self.cdf = cdf

    def draw(self, rng: np.random.Generator, n: int):
        idx = np.searchsorted(self.cdf, rng.random(n), side="right")
        idx = np.minimum(idx, self.cdf.size - 1)
        return idx // (self.ny + 1), idx % (self.ny + 1)


def _chunk_min_surplus(query: RuinQuery, sampler: _Sampler, seed: int, chunk: int, n: int):
    """Simulate ``n`` paths; return each path's minimum of ``U_k - u0`` over ``k = 1..horizon``."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chunk,))))
    premiums = query.scale.as_array()
    principle = query.principle
    dest = query.rules
    level = np.full(n, query.i0 - 1, dtype=np.int64)
    pending = np.zeros(n, dtype=np.int64)
    drift = np.zeros(n, dtype=np.int64)
    low = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    for _ in range(query.horizon):
        x, y = sampler.draw(rng, n)
        delayed = np.zeros(n, dtype=bool)
        has_y = y > 0
        # the delay coin is drawn only for periods with a by-claim
        delayed[has_y] = rng.random(int(has_y.sum())) < query.q
        paid_y = np.where(delayed, 0, y)
        drift += premiums[level] - (x + paid_y + pending)
        np.minimum(low, drift, out=low)
        if principle is Principle.AGGREGATE_REPORTED:
            trig = x + y
        elif principle is Principle.AGGREGATE_SETTLED:
            trig = x + paid_y + pending
        elif principle is Principle.REPORTED_COUNT:
            trig = (x > 0).astype(np.int64) + has_y
        else:
            trig = (x > 0).astype(np.int64) + (paid_y > 0) + (pending > 0)
        level = dest.dest_index(level, trig)
        pending = np.where(delayed, y, 0)
    return low


def _chunk_hits(args):
    query, seed, chunk, n, u_values = args
    low = _chunk_min_surplus(query, _Sampler(query.dist), seed, chunk, n)
    return [int(np.count_nonzero(low < -u)) for u in u_values]


def _chunks(n_paths):
    full, rest = divmod(n_paths, CHUNK_PATHS)
    sizes = [CHUNK_PATHS] * full + ([rest] if rest else [])
    return list(enumerate(sizes))


def default_workers() -> int:
    env = os.environ.get("RUINLAB_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"RUINLAB_WORKERS must be an integer, got {env!r}") from None
    return 1


def simulate_many(
    query: RuinQuery,
    u_values: Sequence[int],
    n_paths: int,
    seed: int,
    workers: Optional[int] = None,
) -> list[MCEstimate]:
    """Estimates for several initial surpluses from one common set of paths.

    Premium levels never depend on the surplus, so a path is ruined from
    ``u`` exactly when its running total of premiums minus settlements
    drops below ``-u``.  Paths are generated in fixed-size chunks with one
    spawned seed per chunk; the result does not depend on ``workers``.
    """
    if n_paths < 1:
        raise ValidationError("paths must be ≥ 1")
    u_values = [int(u) for u in u_values]
    if query.horizon == 0:
        return [MCEstimate.from_count(int(u < 0) * n_paths, n_paths, seed) for u in u_values]
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [(query, seed, c, n, u_values) for c, n in _chunks(n_paths)]
    if workers == 1 or len(jobs) == 1:
        parts = [_chunk_hits(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_hits, jobs))
    hits = np.sum(np.array(parts, dtype=np.int64), axis=0)
    # a negative starting surplus is ruin at time zero, whatever the path does later
    hits = np.where(np.asarray(u_values) < 0, n_paths, hits)
    overflow = _Sampler(query.dist).overflow
    return [
        MCEstimate.from_count(int(h), n_paths, seed, u0=u, overflow_mass=overflow)
        for h, u in zip(hits, u_values)
    ]


def simulate(query: RuinQuery, n_paths: int, seed: int, workers: Optional[int] = None) -> MCEstimate:
    """Monte Carlo estimate of ``psi_{i0}(u0, horizon)``."""
    return simulate_many(query, [query.u0], n_paths, seed, workers)[0]


def _branches(dist):
    out = []
    for (x, y), p in sorted(dist.table.items()):
        if y > 0:
            out.append((x, y, False, p))
            out.append((x, y, True, p))
        else:
            out.append((x, y, False, p))
    return out


def exact_enumerate(
    query: RuinQuery,
    pending: int = 0,
    budget: float = 1e8,
) -> float:
    """Exact ruin probability by walking every (claim, delay) path.

    ``pending`` starts the process with an up-front delayed by-claim.  Only
    finite-support distributions are accepted.
    """
    dist = query.dist
    if not getattr(dist, "finite_support", False) or not hasattr(dist, "table"):
        raise ValidationError("exact enumeration needs a finite-support table distribution")
    if query.u0 < 0:
        return 1.0
    if query.horizon == 0:
        return 0.0
    branches = _branches(dist)
    required = float(len(branches)) ** query.horizon
    if required > budget:
        raise EnumerationBudgetError(required, budget)
    q = query.q
    premium = query.scale.premium
    principle = query.principle

    def walk(state: SimState, periods_left: int) -> float:
        total = 0.0
        for x, y, delayed, p in branches:
            weight = p * ((q if delayed else 1 - q) if y > 0 else 1.0)
            if weight == 0.0:
                continue
            _, surplus, new_pending = settle_period(state, x, y, delayed, premium(state.level))
            if surplus < 0:
                total += weight
                continue
            if periods_left == 1:
                continue
            s = trigger_value(principle, x, y, delayed, state.pending_by_claim)
            nxt = SimState(surplus, rule_apply(query.rules, state.level, s), new_pending)
            total += weight * walk(nxt, periods_left - 1)
        return total

    return walk(SimState(query.u0, query.i0, pending), query.horizon)
