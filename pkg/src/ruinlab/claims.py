"""Joint main-claim / by-claim distributions on the non-negative integers.

A period produces at most one main claim ``X`` and at most one by-claim ``Y``
induced by it, so ``f(0, y) = 0`` for every ``y >= 1``.  Every distribution
here exposes scalar evaluation (``pmf``, ``marginal_x``, ...) and dense
array evaluation (``grid``, ``marginal_x_array``, ...) used by the recursion
engine.  Infinite sums are never truncated inside the engine: tails are
obtained through closed forms or complement identities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .errors import ValidationError

DEFAULT_TRUNCATION_EPSILON = 1e-12


def _check_nonneg(**kwargs):
    for name, value in kwargs.items():
        if value < 0:
            raise ValidationError(f"{name} must be >= 0, got {value}")


class JointClaimPMF:
    """Base class for joint p.m.f.s of (main claim, by-claim).

    Subclasses implement :meth:`_pmf` and :meth:`grid`; analytic families
    override the marginal/tail methods with closed forms.
    """

    support_kind = "abstract"
    finite_support = False

    def __init__(self, truncation_epsilon: float = DEFAULT_TRUNCATION_EPSILON, name: str = ""):
        if not 0 < truncation_epsilon < 1:
            raise ValidationError("truncation_epsilon must lie in (0, 1)")
        self.truncation_epsilon = float(truncation_epsilon)
        self.name = name or self.support_kind
        self._cache: dict[tuple[int, int], float] = {}
        self._x_cutoff: Optional[int] = None
        self._y_cutoff: Optional[int] = None

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r})"

    # -- scalar evaluation -------------------------------------------------

    def pmf(self, x: int, y: int) -> float:
        _check_nonneg(x=x, y=y)
        key = (int(x), int(y))
        try:
            return self._cache[key]
        except KeyError:
            value = self._cache[key] = float(self._pmf(*key))
            return value

    def _pmf(self, x: int, y: int) -> float:
        raise NotImplementedError

    def marginal_x(self, x: int) -> float:
        _check_nonneg(x=x)
        return float(self.marginal_x_array(x)[x])

    def marginal_y(self, y: int) -> float:
        _check_nonneg(y=y)
        return float(self.marginal_y_array(y)[y])

    def tail_x(self, n: int) -> float:
        """P(X > n); equals 1 for n = -1."""
        if n < -1:
            raise ValidationError(f"n must be >= -1, got {n}")
        if n == -1:
            return 1.0
        return float(self.tail_x_array(n)[n])

    # -- array evaluation --------------------------------------------------

    def grid(self, nx: int, ny: int) -> np.ndarray:
        """Dense table ``F[x, y] = f(x, y)`` for ``0 <= x <= nx``, ``0 <= y <= ny``."""
        raise NotImplementedError

    def marginal_x_array(self, nx: int) -> np.ndarray:
        """``f_X(x)`` for ``x = 0..nx`` (exact, no truncation)."""
        raise NotImplementedError

    def marginal_y_array(self, ny: int) -> np.ndarray:
        raise NotImplementedError

    def tail_x_array(self, nx: int) -> np.ndarray:
        """``P(X > n)`` for ``n = 0..nx``."""
        return 1.0 - np.cumsum(self.marginal_x_array(nx))

    def tail_y_array(self, ny: int) -> np.ndarray:
        return 1.0 - np.cumsum(self.marginal_y_array(ny))

    # -- truncation box used by samplers and moment sums -------------------

    def _cutoff(self, tail_fn) -> int:
        n = 0
        while True:
            tails = tail_fn(2 * n + 16)
            hits = np.nonzero(tails < self.truncation_epsilon / 2)[0]
            if hits.size:
                return int(hits[0])
            n = 2 * n + 16

    @property
    def x_cutoff(self) -> int:
        """Smallest N with P(X > N) < truncation_epsilon / 2.

        Half the budget goes to each axis, so the box ``[0, x_cutoff] x [0, y_cutoff]``
        misses less than ``truncation_epsilon`` of the mass.
        """
        if self._x_cutoff is None:
            self._x_cutoff = self._cutoff(self.tail_x_array)
        return self._x_cutoff

    @property
    def y_cutoff(self) -> int:
        if self._y_cutoff is None:
            self._y_cutoff = self._cutoff(self.tail_y_array)
        return self._y_cutoff


class GeometricHigh(JointClaimPMF):
    """Perfectly dependent geometric pair: ``X = Y``, geometric with success prob ``p``."""

    support_kind = "analytic-geometric-family"

    def __init__(self, p: float = 1 / 6, **kwargs):
        if not 0 < p <= 1:
            raise ValidationError("p must lie in (0, 1]")
        self.p = float(p)
        super().__init__(**kwargs)

    def _pmf(self, x, y):
        if x != y:
            return 0.0
        return self.p * (1 - self.p) ** x

    def grid(self, nx, ny):
        out = np.zeros((nx + 1, ny + 1))
        k = np.arange(min(nx, ny) + 1)
        out[k, k] = self.p * (1 - self.p) ** k
        return out

    def marginal_x_array(self, nx):
        return self.p * (1 - self.p) ** np.arange(nx + 1)

    marginal_y_array = marginal_x_array

    def tail_x_array(self, nx):
        return (1 - self.p) ** np.arange(1, nx + 2)

    tail_y_array = tail_x_array


class GeometricLow(JointClaimPMF):
    """Main claim geometric(p); given a main claim, an independent geometric(r) by-claim.

    ``f(0, 0) = p`` and ``f(x, y) = p (1-p)^x r (1-r)^y`` for ``x >= 1``.
    """

    support_kind = "analytic-geometric-family"

    def __init__(self, p: float = 1 / 6, r: float = 1 / 7, **kwargs):
        if not (0 < p <= 1 and 0 < r <= 1):
            raise ValidationError("p and r must lie in (0, 1]")
        self.p, self.r = float(p), float(r)
        super().__init__(**kwargs)

    def _pmf(self, x, y):
        if x == 0:
            return self.p if y == 0 else 0.0
        return self.p * (1 - self.p) ** x * self.r * (1 - self.r) ** y

    def grid(self, nx, ny):
        gx = self.p * (1 - self.p) ** np.arange(nx + 1)
        gy = self.r * (1 - self.r) ** np.arange(ny + 1)
        out = np.outer(gx, gy)
        out[0, :] = 0.0
        out[0, 0] = self.p
        return out

    def marginal_x_array(self, nx):
        return self.p * (1 - self.p) ** np.arange(nx + 1)

    def tail_x_array(self, nx):
        return (1 - self.p) ** np.arange(1, nx + 2)

    def marginal_y_array(self, ny):
        out = (1 - self.p) * self.r * (1 - self.r) ** np.arange(ny + 1)
        out[0] += self.p
        return out

    def tail_y_array(self, ny):
        return (1 - self.p) * (1 - self.r) ** np.arange(1, ny + 2)


class MixturePMF(JointClaimPMF):
    """``weight * left + (1 - weight) * right``, pointwise."""

    support_kind = "mixture"

    def __init__(self, weight: float, left: JointClaimPMF, right: JointClaimPMF, **kwargs):
        if not 0 <= weight <= 1:
            raise ValidationError("mixture weight must lie in [0, 1]")
        self.weight, self.left, self.right = float(weight), left, right
        kwargs.setdefault(
            "truncation_epsilon", min(left.truncation_epsilon, right.truncation_epsilon)
        )
        super().__init__(**kwargs)

    @property
    def finite_support(self):
        return self.left.finite_support and self.right.finite_support

    def _mix(self, a, b):
        return self.weight * a + (1 - self.weight) * b

    def _pmf(self, x, y):
        return self._mix(self.left.pmf(x, y), self.right.pmf(x, y))

    def grid(self, nx, ny):
        return self._mix(self.left.grid(nx, ny), self.right.grid(nx, ny))

    def marginal_x_array(self, nx):
        return self._mix(self.left.marginal_x_array(nx), self.right.marginal_x_array(nx))

    def marginal_y_array(self, ny):
        return self._mix(self.left.marginal_y_array(ny), self.right.marginal_y_array(ny))

    def tail_x_array(self, nx):
        return self._mix(self.left.tail_x_array(nx), self.right.tail_x_array(nx))

    def tail_y_array(self, ny):
        return self._mix(self.left.tail_y_array(ny), self.right.tail_y_array(ny))


class TablePMF(JointClaimPMF):
    """Finite-support distribution given as ``{(x, y): p}``.

    Probabilities must sum to one (within 1e-9) and satisfy ``f(0, y) = 0``
    for ``y >= 1``; violations are rejected rather than repaired.
    """

    support_kind = "finite-table"
    finite_support = True

    def __init__(self, table: Mapping[tuple[int, int], float], **kwargs):
        clean: dict[tuple[int, int], float] = {}
        for (x, y), p in table.items():
            x, y, p = int(x), int(y), float(p)
            if x < 0 or y < 0:
                raise ValidationError(f"negative claim in table entry {(x, y)}")
            if p < 0:
                raise ValidationError(f"negative probability at {(x, y)}")
            if x == 0 and y > 0 and p > 0:
                raise ValidationError(
                    f"f(0, {y}) = {p} > 0: a by-claim cannot occur without a main claim"
                )
            if p > 0:
                clean[(x, y)] = p
        if not clean:
            raise ValidationError("table has no positive mass")
        total = math.fsum(clean.values())
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"table probabilities sum to {total}, expected 1")
        self.table = clean
        self.max_x = max(x for x, _ in clean)
        self.max_y = max(y for _, y in clean)
        super().__init__(**kwargs)

    @classmethod
    def from_rows(cls, rows, **kwargs) -> "TablePMF":
        """Build from ``(x, y, p)`` rows; duplicate cells are an error."""
        table: dict[tuple[int, int], float] = {}
        for x, y, p in rows:
            key = (int(x), int(y))
            if key in table:
                raise ValidationError(f"duplicate table cell {key}")
            table[key] = float(p)
        return cls(table, **kwargs)

    def _pmf(self, x, y):
        return self.table.get((x, y), 0.0)

    def grid(self, nx, ny):
        out = np.zeros((nx + 1, ny + 1))
        for (x, y), p in self.table.items():
            if x <= nx and y <= ny:
                out[x, y] = p
        return out

    def marginal_x_array(self, nx):
        out = np.zeros(nx + 1)
        for (x, _), p in self.table.items():
            if x <= nx:
                out[x] += p
        return out

    def marginal_y_array(self, ny):
        out = np.zeros(ny + 1)
        for (_, y), p in self.table.items():
            if y <= ny:
                out[y] += p
        return out

    def tail_x_array(self, nx):
        # suffix sums over the finite support keep exact zeros exact
        out = np.zeros(nx + 1)
        for (x, _), p in self.table.items():
            out[: min(x, nx + 1)] += p
        return out

    def tail_y_array(self, ny):
        out = np.zeros(ny + 1)
        for (_, y), p in self.table.items():
            out[: min(y, ny + 1)] += p
        return out

    @property
    def x_cutoff(self):
        return self.max_x

    @property
    def y_cutoff(self):
        return self.max_y


def high_correlation(**kwargs) -> GeometricHigh:
    return GeometricHigh(name="H", **kwargs)


def low_correlation(**kwargs) -> GeometricLow:
    return GeometricLow(name="L", **kwargs)


def moderate_correlation(**kwargs) -> MixturePMF:
    return MixturePMF(0.5, high_correlation(), low_correlation(), name="M", **kwargs)


BUILTIN = {"H": high_correlation, "M": moderate_correlation, "L": low_correlation}


def from_config(cfg) -> JointClaimPMF:
    """Build a distribution from a config mapping or a built-in label ("H", "M", "L").

    Schema: ``{family: geometric_h|geometric_l|mixture|table, weight?, table?,
    truncation_epsilon?}``.  ``table`` is a list of ``[x, y, p]`` rows.  A
    mixture takes ``left``/``right`` sub-configs, defaulting to the two
    geometric families.
    """
    if isinstance(cfg, str):
        try:
            return BUILTIN[cfg.upper()]()
        except KeyError:
            raise ValidationError(f"unknown built-in distribution {cfg!r}") from None
    if not isinstance(cfg, Mapping):
        raise ValidationError("distribution config must be a mapping or a label")
    family = cfg.get("family")
    extra = {}
    if "truncation_epsilon" in cfg:
        extra["truncation_epsilon"] = float(cfg["truncation_epsilon"])
    if family == "geometric_h":
        return GeometricHigh(p=cfg.get("p", 1 / 6), **extra)
    if family == "geometric_l":
        return GeometricLow(p=cfg.get("p", 1 / 6), r=cfg.get("r", 1 / 7), **extra)
    if family == "mixture":
        left = from_config(cfg.get("left", {"family": "geometric_h"}))
        right = from_config(cfg.get("right", {"family": "geometric_l"}))
        return MixturePMF(cfg.get("weight", 0.5), left, right, **extra)
    if family == "table":
        rows = cfg.get("table")
        if not rows:
            raise ValidationError("table family requires a non-empty 'table'")
        return TablePMF.from_rows(rows, **extra)
    raise ValidationError(f"unknown distribution family {family!r}")


# -- module-level operations ------------------------------------------------


def pmf_joint(d: JointClaimPMF, x: int, y: int) -> float:
    return d.pmf(x, y)


def marginal_x(d: JointClaimPMF, x: int) -> float:
    return d.marginal_x(x)


def marginal_y(d: JointClaimPMF, y: int) -> float:
    return d.marginal_y(y)


def tail_x(d: JointClaimPMF, n: int) -> float:
    return d.tail_x(n)


def xi(d: JointClaimPMF, y: int, n: int) -> float:
    """Sum of ``f(x, y + n - x)`` over ``x = 1..n``.

    This is the probability that a main claim of size ``x <= n`` comes with a
    by-claim overshooting ``n - x`` by exactly ``y``.
    """
    _check_nonneg(y=y, n=n)
    return math.fsum(d.pmf(x, y + n - x) for x in range(1, n + 1))


def xi_tail_sum(d: JointClaimPMF, n: int) -> float:
    """``sum_{y>=1} xi(d, y, n)`` computed exactly through the marginal of X."""
    _check_nonneg(n=n)
    if n == 0:
        return 0.0
    fx = d.marginal_x_array(n)
    return math.fsum(
        fx[x] - math.fsum(d.pmf(x, y) for y in range(n - x + 1)) for x in range(1, n + 1)
    )


def xi_table(d: JointClaimPMF, y_max: int, n_max: int, F: Optional[np.ndarray] = None) -> np.ndarray:
    """Array ``out[y, n] = xi(d, y, n)`` for ``0 <= y <= y_max``, ``0 <= n <= n_max``."""
    if F is None:
        F = d.grid(n_max, n_max + y_max)
    out = np.zeros((y_max + 1, n_max + 1))
    ys = np.arange(y_max + 1)[:, None]
    for n in range(1, n_max + 1):
        xs = np.arange(1, n + 1)[None, :]
        out[:, n] = F[xs, ys + n - xs].sum(axis=1)
    return out


def xi_tail_array(d: JointClaimPMF, n_max: int, F: Optional[np.ndarray] = None) -> np.ndarray:
    """``xi_tail_sum(d, n)`` for ``n = 0..n_max`` via the marginal complement identity."""
    if F is None:
        F = d.grid(n_max, n_max)
    fx = d.marginal_x_array(n_max)
    cum = np.cumsum(F[: n_max + 1, : n_max + 1], axis=1)
    out = np.zeros(n_max + 1)
    for n in range(1, n_max + 1):
        xs = np.arange(1, n + 1)
        out[n] = np.sum(fx[xs] - cum[xs, n - xs])
    return out


@dataclass(frozen=True)
class ClaimStatistics:
    mean_x: float
    mean_y: float
    corr_xy: Optional[float]
    corr_counts: Optional[float]


def _corr(cov, var_a, var_b):
    if var_a <= 0 or var_b <= 0:
        return None
    return cov / math.sqrt(var_a * var_b)


def statistics(d: JointClaimPMF) -> ClaimStatistics:
    """Means, Pearson correlation of (X, Y) and of the claim-count indicators.

    Degenerate variances give ``None`` for the matching correlation.
    """
    nx, ny = d.x_cutoff, d.y_cutoff
    F = d.grid(nx, ny)
    xs = np.arange(nx + 1)[:, None]
    ys = np.arange(ny + 1)[None, :]
    mass = F.sum()
    ex = float((F * xs).sum() / mass)
    ey = float((F * ys).sum() / mass)
    cov = float((F * (xs - ex) * (ys - ey)).sum() / mass)
    vx = float((F * (xs - ex) ** 2).sum() / mass)
    vy = float((F * (ys - ey) ** 2).sum() / mass)

    f00 = d.pmf(0, 0)
    px = 1.0 - d.marginal_x(0)
    py = 1.0 - d.marginal_y(0)
    pxy = 1.0 - d.marginal_x(0) - d.marginal_y(0) + f00
    corr_counts = _corr(pxy - px * py, px * (1 - px), py * (1 - py))
    return ClaimStatistics(ex, ey, _corr(cov, vx, vy), corr_counts)
