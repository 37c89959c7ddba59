"""Exact finite-horizon ruin probabilities by backward recursion over the horizon.

State layout
------------
Every layer stores values against the *effective surplus* ``v = u - z``,
where ``z`` is the by-claim carried over from the previous period (``z = 0``
when nothing is pending).  The available funds at the end of the current
period, before any new claim, are ``N = v + c_i``; when ``N < 0`` the pending
by-claim alone causes ruin.

* Reported principles: the trigger ignores ``z``, so ``psi'_i(u; z, n)``
  reduces to the layer value at ``v = u - z`` (``v < 0`` holds
  ``psi'_i(0; -v, n)``).  Arrays have shape ``(l, c_l + V + 1)``.
* Settled count: the trigger only sees whether a by-claim is pending, so
  arrays have shape ``(l, 2, c_l + V + 1)`` with the middle axis the
  pending flag.
* Settled aggregate: the trigger adds ``z``.  Beyond the rule's saturation
  point the exact value of ``z`` no longer changes any destination, so the
  middle axis holds ``min(z, saturation)`` (``0`` = nothing pending).

Index ``v + c_l`` addresses the last axis.  Cells with ``v < -c_j`` hold 1
(certain ruin one period ahead).  Layer ``n`` is valid for
``v <= u_top + (horizon - n) * c_l``, which is exactly what layer ``n + 1``
reads.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bonus_malus import Principle, PremiumScale, RuleSet
from .claims import JointClaimPMF, tail_x, xi_tail_array, xi_table, xi_tail_sum
from .errors import ValidationError


@dataclass(frozen=True)
class RuinQuery:
    """A single ruin problem.

    ``u_max`` optionally widens the solved surplus range so that one solve
    returns ``psi_{i0}(u, horizon)`` for every ``0 <= u <= max(u0, u_max)``.
    A negative ``u0`` is accepted and answered by convention (ruin already
    happened).
    """

    principle: Principle
    dist: JointClaimPMF
    q: float
    scale: PremiumScale
    rules: RuleSet
    u0: int
    i0: int
    horizon: int
    u_max: Optional[int] = None
    emit_grid: bool = False

    def __post_init__(self):
        object.__setattr__(self, "principle", Principle.parse(self.principle))
        if not isinstance(self.dist, JointClaimPMF):
            raise ValidationError("dist must be a JointClaimPMF")
        if not 0.0 <= float(self.q) <= 1.0:
            raise ValidationError(f"q must lie in [0, 1], got {self.q}")
        if self.rules.n_levels != len(self.scale):
            raise ValidationError("rule set and premium scale disagree on the number of levels")
        if not 1 <= int(self.i0) <= len(self.scale):
            raise ValidationError(f"initial level {self.i0} outside 1..{len(self.scale)}")
        if int(self.horizon) < 0:
            raise ValidationError("horizon must be >= 0")
        if self.u_max is not None and int(self.u_max) < 0:
            raise ValidationError("u_max must be >= 0")
        for name in ("u0", "i0", "horizon"):
            value = getattr(self, name)
            if int(value) != value:
                raise ValidationError(f"{name} must be an integer")
            object.__setattr__(self, name, int(value))
        object.__setattr__(self, "q", float(self.q))

    @property
    def u_top(self) -> int:
        return max(self.u0, self.u_max or 0, 0)

    def echo(self) -> dict:
        return {
            "principle": self.principle.value,
            "distribution": self.dist.name,
            "q": self.q,
            "scale": list(self.scale.levels),
            "rules": {"kind": self.rules.kind, **self.rules.params},
            "u0": self.u0,
            "level0": self.i0,
            "horizon": self.horizon,
            "u_max": self.u_top,
        }


@dataclass
class DPLayer:
    """Values of ``psi`` and ``psi'`` for one horizon ``n``.

    ``values`` follows the module-level layout; ``v_max`` is the largest
    effective surplus stored.
    """

    n: int
    principle: Principle
    scale: PremiumScale
    values: np.ndarray
    v_max: int
    z_clamp: int = 0

    @property
    def offset(self) -> int:
        return self.scale.top

    def _check(self, i, u):
        if not 1 <= i <= len(self.scale):
            raise ValidationError(f"level {i} outside 1..{len(self.scale)}")
        if u > self.v_max:
            raise ValidationError(f"surplus {u} beyond the solved range (max {self.v_max})")

    def psi(self, i: int, u: int) -> float:
        """``psi_i(u, n)``; 1 for ``u < 0`` and 0 for ``n = 0``."""
        if u < 0:
            return 1.0
        self._check(i, u)
        if self.n == 0:
            return 0.0
        if self.values.ndim == 2:
            return float(self.values[i - 1, self.offset + u])
        return float(self.values[i - 1, 0, self.offset + u])

    def _pending(self, i: int, w: int, z: int) -> float:
        """Stored value for effective surplus ``w`` with a pending claim ``z``."""
        c_i = self.scale.premium(i)
        if w < -c_i:
            return 1.0
        if self.values.ndim == 2:
            return float(self.values[i - 1, self.offset + w])
        k = 1 if self.principle is Principle.SETTLED_COUNT else min(z, self.z_clamp)
        return float(self.values[i - 1, k, self.offset + w])

    def psi_prime(self, i: int, u: int, z: int) -> float:
        """``psi'_i(u; z, n)``: ruin probability with an up-front pending by-claim ``z >= 1``."""
        if z < 1:
            raise ValidationError("up-front by-claim must be >= 1")
        if u < 0:
            return 1.0
        self._check(i, u)
        if self.n == 0:
            return 0.0
        if self.principle.is_reported:
            return lemma1_reduce(u, z, self.scale.premium(i), self, i)
        return self._pending(i, u - z, z)

    def psi_curve(self, i: int, u_max: Optional[int] = None) -> np.ndarray:
        """``psi_i(u, n)`` for ``u = 0..u_max``."""
        u_max = self.v_max if u_max is None else u_max
        self._check(i, u_max)
        if self.n == 0:
            return np.zeros(u_max + 1)
        row = self.values[i - 1] if self.values.ndim == 2 else self.values[i - 1, 0]
        return row[self.offset : self.offset + u_max + 1].copy()


@dataclass
class RuinResult:
    value: float
    final: DPLayer
    query: RuinQuery
    table: Optional[list[DPLayer]] = None
    truncation_bound: float = 0.0
    metadata: dict = field(default_factory=dict)

    @property
    def curve(self) -> np.ndarray:
        """``psi_{i0}(u, horizon)`` for ``u = 0..u_top``."""
        return self.final.psi_curve(self.query.i0, self.query.u_top)


# -- closed-form pieces -----------------------------------------------------


def base_case_psi(dist: JointClaimPMF, q: float, scale: PremiumScale, i: int, u: int) -> float:
    """One-period ruin probability from surplus ``u`` at level ``i``.

    Ruin in the first period happens when the main claim alone exceeds the
    funds, or when an undelayed by-claim pushes the total over them.
    """
    if u < 0:
        return 1.0
    n = u + scale.premium(i)
    return (1.0 - q) * xi_tail_sum(dist, n) + tail_x(dist, n)


def lemma1_reduce(u: int, z: int, c_i: int, layer: DPLayer, i: int) -> float:
    """Reduce ``psi'_i(u; z, n)`` to stored values under a reported trigger.

    ``z <= u``: the pending claim just lowers the surplus, ``psi_i(u - z, n)``.
    ``u < z <= u + c_i``: same as ``psi'_i(0; z - u, n)``.
    ``z > u + c_i``: the first period cannot be survived.
    """
    if not layer.principle.is_reported:
        raise RuntimeError(
            f"pending-claim reduction used under {layer.principle.value}: "
            "with settled triggers the pending claim changes future premiums"
        )
    if z > u + c_i:
        return 1.0
    if layer.n == 0:
        return 0.0
    return float(layer.values[i - 1, layer.offset + u - z])


class _ClaimArrays:
    """Claim-distribution arrays shared by every recursion, exact up to ``n_max``.

    ``F[x, y]`` covers ``x <= n_max`` and ``y <= n_max + c_l``; everything past
    that box enters only through tail identities.
    """

    def __init__(self, dist: JointClaimPMF, n_max: int, c_top: int):
        self.n_max = n_max
        self.c_top = c_top
        F = dist.grid(n_max, n_max + c_top)
        self.F = F
        self.fx = dist.marginal_x_array(n_max)
        self.tailx = dist.tail_x_array(n_max)
        self.f0 = F[:, 0].copy()
        # h[s]: both claims present with x + y = s
        h = np.zeros(n_max + 1)
        for s in range(2, n_max + 1):
            xs = np.arange(1, s)
            h[s] = F[xs, s - xs].sum()
        self.h = h
        self.g = h + self.f0
        self.xi = xi_table(dist, c_top, n_max, F)
        self.xtail = xi_tail_array(dist, n_max, F)
        self.xi_head = self.xi[1:].sum(axis=0)
        self.cumF = np.cumsum(F, axis=1)

    def first_period_ruin(self, q: float, N: np.ndarray) -> np.ndarray:
        return (1.0 - q) * self.xtail[N] + self.tailx[N]


def _masked_conv(weights, dests, rows, n_out):
    """``out[N] = sum_s weights[s] * rows[dests[s], N - s]`` for ``N < n_out``.

    ``rows[j]`` holds the non-negative-surplus part of level ``j``.
    """
    out = np.zeros(n_out)
    w = weights[:n_out]
    d = dests[:n_out]
    for j in np.unique(d[w != 0]):
        out += np.convolve(np.where(d == j, w, 0.0), rows[j][:n_out])[:n_out]
    return out


def _fill_layer(shape_prefix, l, c, off, v_max, ruin_fill):
    arr = np.empty(shape_prefix + (off + v_max + 1,))
    arr.fill(np.nan)
    for i in range(l):
        arr[i, ..., : off - c[i]] = ruin_fill
    return arr


def _place(arr_row, c_i, off, vals):
    """Write ``vals[N]`` (N = 0..) at index ``N - c_i + off``."""
    start = off - c_i
    arr_row[start : start + len(vals)] = vals


class _Solver:
    def __init__(self, query: RuinQuery):
        self.query = query
        self.c = query.scale.as_array()
        self.l = len(self.c)
        self.off = int(self.c.max())
        self.H = query.horizon
        self.u_top = query.u_top
        self.rules = query.rules
        self.q = query.q
        self.arrays = _ClaimArrays(query.dist, self.u_top + self.H * self.off, self.off)

    def v_max(self, n):
        return self.u_top + (self.H - n) * self.off

    def dest(self, i, s):
        return self.rules.dest_index(i, s)

    # shared for every principle
    def base_layer(self, prefix) -> np.ndarray:
        vm = self.v_max(1)
        arr = _fill_layer(prefix, self.l, self.c, self.off, vm, 1.0)
        for i in range(self.l):
            N = np.arange(vm + self.c[i] + 1)
            arr[i, ..., self.off - self.c[i] :] = self.arrays.first_period_ruin(self.q, N)
        return arr

    def run(self, prefix, step) -> list[np.ndarray]:
        layers = [self.base_layer(prefix)]
        for n in range(1, self.H):
            layers.append(step(layers[-1], n))
            if not self.query.emit_grid:
                layers = layers[-1:]
        return layers


def _solve_reported(query: RuinQuery, count: bool):
    s = _Solver(query)
    A, q, off, l, c = s.arrays, s.q, s.off, s.l, s.c
    ys = np.arange(1, off + 1)

    def step(P, n):
        vm_prev, vm = s.v_max(n), s.v_max(n + 1)
        new = _fill_layer((l,), l, c, off, vm, 1.0)
        pos = P[:, off:]
        for i in range(l):
            n_out = vm + c[i] + 1
            N = np.arange(n_out)
            svals = np.arange(n_out)
            if count:
                # no claim, main claim only, main claim with by-claim (delayed or not)
                t1 = _masked_conv(A.f0, s.dest(i, (svals > 0).astype(int)), pos, n_out)
                t1 += _masked_conv(A.h, s.dest(i, np.full(n_out, 2)), pos, n_out)
                dj = s.dest(i, np.full((n_out, off), 2))
            else:
                t1 = _masked_conv(A.g, s.dest(i, svals), pos, n_out)
                dj = s.dest(i, N[:, None] + ys[None, :])
            # by-claim overshooting the funds but delayed one period
            carried = P[dj, off - ys[None, :]]
            t2 = q * (A.xi[1:, :n_out].T * carried).sum(axis=1)
            t3 = q * (A.xtail[:n_out] - A.xi_head[:n_out])
            _place(new[i], c[i], off, t1 + t2 + t3 + A.first_period_ruin(q, N))
        del vm_prev
        return new

    return s, s.run((l,), step)


def _solve_settled_count(query: RuinQuery):
    s = _Solver(query)
    A, q, off, l, c = s.arrays, s.q, s.off, s.l, s.c
    ys = np.arange(1, off + 1)

    def step(Q, n):
        vm = s.v_max(n + 1)
        new = _fill_layer((l, 2), l, c, off, vm, 1.0)
        clear = Q[:, 0, off:]
        pend = Q[:, 1, off:]
        for i in range(l):
            n_out = vm + c[i] + 1
            N = np.arange(n_out)
            svals = np.arange(n_out)
            for k in (0, 1):
                full = np.full(n_out, 0)
                t = _masked_conv(A.f0, s.dest(i, k + (svals > 0)), clear, n_out)
                t += (1 - q) * _masked_conv(A.h, s.dest(i, full + 2 + k), clear, n_out)
                # delayed by-claim: only the main claim and the old pending one settle
                t += q * _masked_conv(A.h, s.dest(i, full + 1 + k), pend, n_out)
                j = int(s.dest(i, 1 + k))
                carried = Q[j, 1, off - ys]
                t += q * (A.xi[1:, :n_out] * carried[:, None]).sum(axis=0)
                t += q * (A.xtail[:n_out] - A.xi_head[:n_out])
                t += A.first_period_ruin(q, N)
                _place(new[i, k], c[i], off, t)
        return new

    return s, s.run((l, 2), step)


def _solve_settled_aggregate(query: RuinQuery):
    s = _Solver(query)
    A, q, off, l, c = s.arrays, s.q, s.off, s.l, s.c
    zc = max(s.rules.saturation, 1)

    def step(Q, n):
        vm_prev, vm = s.v_max(n), s.v_max(n + 1)
        new = _fill_layer((l, zc + 1), l, c, off, vm, 1.0)
        clear = Q[:, 0, off:]
        # carried[j][m, x]: main claim x paid from funds m + x, by-claim delayed,
        # summed over the by-claim size (certain ruin included)
        M = vm_prev
        m = np.arange(M + 1)[:, None]
        y = np.arange(1, M + off + 1)[None, :]
        iv = off + m - y
        ok = iv >= 0
        kk = np.minimum(y, zc)
        Fx = A.F[1 : M + 1, 1 : M + off + 1]
        ruin_beyond = A.fx[1 : M + 1][None, :] - A.cumF[1 : M + 1, m[:, 0] + off].T
        carried = np.empty((l, M + 1, M))
        for j in range(l):
            B = np.where(ok, Q[j][kk, np.where(ok, iv, 0)], 0.0)
            carried[j] = B @ Fx.T + ruin_beyond
        # diag[j, N, x-1] = carried[j, N - x, x - 1] for 1 <= x <= N
        Ngrid = np.arange(M + 1)[:, None]
        xgrid = np.arange(1, M + 1)[None, :]
        mgrid = Ngrid - xgrid
        valid = mgrid >= 0
        diag = np.where(valid[None], carried[:, np.where(valid, mgrid, 0), xgrid - 1], 0.0)
        xr = np.arange(M)
        w = A.f0 + (1 - q) * A.h
        for i in range(l):
            n_out = vm + c[i] + 1
            N = np.arange(n_out)
            for k in range(zc + 1):
                t = _masked_conv(w, s.dest(i, np.arange(n_out) + k), clear, n_out)
                dj = s.dest(i, xr + 1 + k)
                t += q * diag[dj, :n_out, xr].sum(axis=0)
                t += A.first_period_ruin(q, N)
                _place(new[i, k], c[i], off, t)
        return new

    return s, s.run((l, zc + 1), step), zc


def _finish(query, solver, layers, started, z_clamp=0) -> RuinResult:
    dp = [
        DPLayer(n, query.principle, query.scale, arr, solver.v_max(n), z_clamp)
        for n, arr in zip(range(query.horizon - len(layers) + 1, query.horizon + 1), layers)
    ]
    final = dp[-1]
    value = final.psi(query.i0, query.u0)
    meta = {
        "query": query.echo(),
        "seconds": time.perf_counter() - started,
        "surplus_grid_max": solver.u_top + query.horizon * solver.off,
    }
    return RuinResult(value, final, query, dp if query.emit_grid else None, 0.0, meta)


def _trivial(query, started) -> Optional[RuinResult]:
    if query.horizon > 0 and query.u0 >= 0:
        return None
    empty = DPLayer(0, query.principle, query.scale, np.zeros((len(query.scale), 0)), query.u_top)
    value = 1.0 if query.u0 < 0 else 0.0
    meta = {"query": query.echo(), "seconds": time.perf_counter() - started}
    return RuinResult(value, empty, query, [empty] if query.emit_grid else None, 0.0, meta)


def _expect(query, principle):
    if query.principle is not principle:
        raise ValidationError(f"query principle is {query.principle.value}, expected {principle.value}")


def solve_reported_aggregate(query: RuinQuery) -> RuinResult:
    _expect(query, Principle.AGGREGATE_REPORTED)
    started = time.perf_counter()
    trivial = _trivial(query, started)
    if trivial is not None:
        return trivial
    solver, layers = _solve_reported(query, count=False)
    return _finish(query, solver, layers, started)


def solve_reported_count(query: RuinQuery) -> RuinResult:
    _expect(query, Principle.REPORTED_COUNT)
    started = time.perf_counter()
    trivial = _trivial(query, started)
    if trivial is not None:
        return trivial
    solver, layers = _solve_reported(query, count=True)
    return _finish(query, solver, layers, started)


def solve_settled_aggregate(query: RuinQuery) -> RuinResult:
    _expect(query, Principle.AGGREGATE_SETTLED)
    started = time.perf_counter()
    trivial = _trivial(query, started)
    if trivial is not None:
        return trivial
    solver, layers, zc = _solve_settled_aggregate(query)
    return _finish(query, solver, layers, started, zc)


def solve_settled_count(query: RuinQuery) -> RuinResult:
    _expect(query, Principle.SETTLED_COUNT)
    started = time.perf_counter()
    trivial = _trivial(query, started)
    if trivial is not None:
        return trivial
    solver, layers = _solve_settled_count(query)
    return _finish(query, solver, layers, started)


SOLVERS = {
    Principle.AGGREGATE_REPORTED: solve_reported_aggregate,
    Principle.AGGREGATE_SETTLED: solve_settled_aggregate,
    Principle.REPORTED_COUNT: solve_reported_count,
    Principle.SETTLED_COUNT: solve_settled_count,
}


def ruin_probability(query: RuinQuery) -> RuinResult:
    return SOLVERS[query.principle](query)


def write_grid_csv(result: RuinResult, fh, fmt="{:.6g}"):
    """CSV rows ``(n, level, u, psi)`` for every stored layer, ``u <= u_top``."""
    if result.table is None:
        raise ValidationError("result was solved without emit_grid")
    w = csv.writer(fh)
    w.writerow(["n", "level", "u", "psi"])
    u_top = result.query.u_top
    for layer in result.table:
        for i in range(1, len(layer.scale) + 1):
            curve = layer.psi_curve(i, u_top) if layer.n else np.zeros(u_top + 1)
            for u, v in enumerate(curve):
                w.writerow([layer.n, i, u, fmt.format(v)])
