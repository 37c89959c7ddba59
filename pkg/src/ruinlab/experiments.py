"""Reproduction harness for the reference numerical study.

The study fixes three joint claim distributions (high / moderate / low
correlation), two delay probabilities, a five-level premium scale and two
threshold rule sets; every table and figure is a slice of
``psi_3(u, 20)`` over that grid.  Reference values live in
``data/reference_values.yaml`` and are compared cell by cell.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import yaml

from .bonus_malus import (
    PremiumScale,
    Principle,
    RuleSet,
    expected_premium,
    stationary_distribution,
    transition_matrix,
    write_matrix_csv,
)
from .claims import BUILTIN, statistics
from .ruin_engine import RuinQuery, ruin_probability

TABLE_TOLERANCE = 2e-5
MARKOV_TOLERANCE = 1e-5
PREMIUM_TOLERANCE = 0.01

TABLE_PRINCIPLES = {
    1: Principle.AGGREGATE_REPORTED,
    2: Principle.AGGREGATE_SETTLED,
    3: Principle.REPORTED_COUNT,
    4: Principle.SETTLED_COUNT,
}

# figure id -> table id (one curve per scenario)
_FIG_SINGLE = {1: 1, 2: 2, 5: 3, 6: 4}
# figure id -> ((reported table, settled table), scenario suffix) for R-vs-S pairs
_FIG_COMPARE = {
    3: ((1, 2), "1"),
    4: ((1, 2), "2"),
    7: ((3, 4), "1"),
    8: ((3, 4), "2"),
}

SMOKE_U = (0, 50, 100)
SMOKE_SCENARIOS = ("H1", "L2")


@dataclass(frozen=True)
class Scenario:
    label: str
    dist_key: str
    q: float


@dataclass(frozen=True)
class ScenarioCatalog:
    """The fixed experimental grid: {H, M, L} x {q = 0.2, q = 0.8}."""

    scale: PremiumScale = PremiumScale((11, 12, 14, 16, 18))
    level0: int = 3
    horizon: int = 20
    u_grid: tuple[int, ...] = tuple(range(0, 101, 10))
    aggregate_thresholds: tuple[int, int] = (3, 14)
    count_thresholds: tuple[int, int] = (0, 1)
    scenarios: tuple[Scenario, ...] = tuple(
        Scenario(f"{d}{k}", d, q) for d in ("H", "M", "L") for k, q in ((1, 0.2), (2, 0.8))
    )

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.scenarios]

    def scenario(self, label: str) -> Scenario:
        for s in self.scenarios:
            if s.label == label.upper():
                return s
        raise KeyError(f"unknown scenario {label!r}; expected one of {self.labels}")

    def rules(self, principle: Principle) -> RuleSet:
        a, b = self.count_thresholds if principle.is_count else self.aggregate_thresholds
        return RuleSet.threshold(a, b, len(self.scale))

    def query(self, principle: Principle, label: str, u_max: int = 100) -> RuinQuery:
        s = self.scenario(label)
        return RuinQuery(
            principle,
            BUILTIN[s.dist_key](),
            s.q,
            self.scale,
            self.rules(principle),
            0,
            self.level0,
            self.horizon,
            u_max=u_max,
        )


CATALOG = ScenarioCatalog()


@lru_cache(maxsize=1)
def load_reference() -> dict:
    """Parsed reference fixture (cached)."""
    text = resources.files("ruinlab").joinpath("data/reference_values.yaml").read_text()
    return yaml.safe_load(text)


def reference_cell(k: int, u: int, label: str) -> Optional[float]:
    ref = load_reference()
    if u not in ref["u"]:
        return None
    row = ref["u"].index(u)
    col = ref["scenarios"].index(label)
    return float(ref["tables"][k]["rows"][row][col])


def _curve(args) -> np.ndarray:
    principle, label, u_max = args
    return ruin_probability(CATALOG.query(principle, label, u_max)).curve


_CURVE_CACHE: dict[tuple[Principle, str, int], np.ndarray] = {}


def _curves(pairs: Sequence[tuple[Principle, str]], u_max: int, workers: int = 1) -> list[np.ndarray]:
    """Solved curves ``psi_3(u, 20), u = 0..u_max`` in the order of ``pairs``.

    Curves are cached per process; a curve solved to a larger ``u_max`` is reused.
    """
    def cached(p, lab):
        for (cp, clab, cu), curve in _CURVE_CACHE.items():
            if cp is p and clab == lab and cu >= u_max:
                return curve[: u_max + 1]
        return None

    missing = [(p, lab, u_max) for p, lab in dict.fromkeys(pairs) if cached(p, lab) is None]
    if workers > 1 and len(missing) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            solved = list(pool.map(_curve, missing))
    else:
        solved = [_curve(j) for j in missing]
    _CURVE_CACHE.update(zip(missing, solved))
    return [cached(p, lab) for p, lab in pairs]


# -- tables -----------------------------------------------------------------


@dataclass
class CellDiff:
    u: int
    scenario: str
    computed: float
    reference: Optional[float]

    @property
    def abs_diff(self) -> Optional[float]:
        return None if self.reference is None else abs(self.computed - self.reference)


@dataclass
class TableReport:
    k: int
    principle: Principle
    u_values: list[int]
    scenarios: list[str]
    cells: list[CellDiff]
    tolerance: float = TABLE_TOLERANCE

    def value(self, u: int, label: str) -> float:
        for c in self.cells:
            if c.u == u and c.scenario == label:
                return c.computed
        raise KeyError((u, label))

    @property
    def failures(self) -> list[CellDiff]:
        return [c for c in self.cells if c.abs_diff is not None and c.abs_diff > self.tolerance]

    @property
    def max_abs_diff(self) -> float:
        diffs = [c.abs_diff for c in self.cells if c.abs_diff is not None]
        return max(diffs) if diffs else 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_csv(self, fmt: str = "{:.5f}") -> str:
        """Wide CSV, one row per ``u`` and one column per scenario."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u"] + self.scenarios)
        for u in self.u_values:
            w.writerow([u] + [fmt.format(self.value(u, lab)) for lab in self.scenarios])
        return buf.getvalue()

    def diff_text(self) -> str:
        lines = [
            f"table {self.k} ({self.principle.value}): {len(self.cells)} cells, "
            f"max |diff| = {self.max_abs_diff:.3e}, tolerance {self.tolerance:g}, "
            f"{len(self.failures)} beyond tolerance",
        ]
        for c in self.failures:
            lines.append(
                f"  u={c.u:<3d} {c.scenario}: computed {c.computed:.6f} "
                f"reference {c.reference:.5f} diff {c.computed - c.reference:+.2e}"
            )
        return "\n".join(lines) + "\n"


def reproduce_table(
    k: int,
    u_values: Optional[Iterable[int]] = None,
    scenarios: Optional[Iterable[str]] = None,
    workers: int = 1,
) -> TableReport:
    """Compute table ``k`` (1..4) and compare every cell with the reference."""
    if k not in TABLE_PRINCIPLES:
        raise ValueError(f"table id must be 1..4, got {k}")
    principle = TABLE_PRINCIPLES[k]
    u_values = list(CATALOG.u_grid if u_values is None else u_values)
    labels = [CATALOG.scenario(s).label for s in (scenarios or CATALOG.labels)]
    curves = _curves([(principle, lab) for lab in labels], max(u_values), workers)
    cells = [
        CellDiff(u, lab, float(curve[u]), reference_cell(k, u, lab))
        for lab, curve in zip(labels, curves)
        for u in u_values
    ]
    return TableReport(k, principle, u_values, labels, cells)


# -- Markov chain -----------------------------------------------------------


@dataclass
class ChainReport:
    principle: Principle
    dist_key: str
    matrix: np.ndarray
    stationary: np.ndarray
    expected_premium: float
    ref_matrix: np.ndarray
    ref_stationary: np.ndarray
    ref_premium: float

    @property
    def matrix_diff(self) -> float:
        return float(np.abs(self.matrix - self.ref_matrix).max())

    @property
    def stationary_diff(self) -> float:
        return float(np.abs(self.stationary - self.ref_stationary).max())

    @property
    def premium_diff(self) -> float:
        return abs(self.expected_premium - self.ref_premium)

    @property
    def passed(self) -> bool:
        return (
            self.matrix_diff <= MARKOV_TOLERANCE
            and self.stationary_diff <= MARKOV_TOLERANCE
            and self.premium_diff <= PREMIUM_TOLERANCE
        )

    def diff_line(self) -> str:
        return (
            f"{self.principle.value} {self.dist_key}: matrix {self.matrix_diff:.2e}, "
            f"stationary {self.stationary_diff:.2e}, premium {self.expected_premium:.4f} "
            f"(ref {self.ref_premium:.2f}, diff {self.premium_diff:.2e}) "
            f"{'ok' if self.passed else 'FAIL'}"
        )


def reproduce_markov() -> list[ChainReport]:
    """Transition matrices, stationary vectors and expected premiums for both reported triggers."""
    ref = load_reference()["markov"]
    out = []
    for principle in (Principle.AGGREGATE_REPORTED, Principle.REPORTED_COUNT):
        rules = CATALOG.rules(principle)
        for key in ("H", "M", "L"):
            P = transition_matrix(BUILTIN[key](), rules, principle)
            pi = stationary_distribution(P)
            r = ref[principle.value][key]
            out.append(
                ChainReport(
                    principle,
                    key,
                    P,
                    pi,
                    expected_premium(pi, CATALOG.scale),
                    np.array(r["matrix"], dtype=float),
                    np.array(r["stationary"], dtype=float),
                    float(r["expected_premium"]),
                )
            )
    return out


def reproduce_statistics() -> dict:
    """Means and correlations of the three built-in distributions."""
    ref = load_reference()["correlations"]
    out = {}
    for key in ("H", "M", "L"):
        st = statistics(BUILTIN[key]())
        out[key] = {"stats": st, "reference": ref[key]}
    return out


# -- figures ----------------------------------------------------------------


@dataclass
class FigureData:
    figure: int
    u: np.ndarray
    series: dict[str, np.ndarray] = field(default_factory=dict)

    def to_csv(self, fmt: str = "{:.10g}") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = list(self.series)
        w.writerow(["u"] + names)
        for idx, u in enumerate(self.u):
            w.writerow([int(u)] + [fmt.format(self.series[n][idx]) for n in names])
        return buf.getvalue()


def figure_series(figure: int) -> list[tuple[str, Principle, str]]:
    """``(series name, principle, scenario)`` triples plotted in ``figure``."""
    if figure in _FIG_SINGLE:
        p = TABLE_PRINCIPLES[_FIG_SINGLE[figure]]
        return [(lab, p, lab) for lab in CATALOG.labels]
    if figure in _FIG_COMPARE:
        (kr, ks), suffix = _FIG_COMPARE[figure]
        out = []
        for d in ("H", "M", "L"):
            lab = d + suffix
            out.append((f"{lab}^R", TABLE_PRINCIPLES[kr], lab))
            out.append((f"{lab}^S", TABLE_PRINCIPLES[ks], lab))
        return out
    raise ValueError(f"figure id must be 1..8, got {figure}")


def figure_data(figure: int, u_max: int = 100, workers: int = 1) -> FigureData:
    """``(u, psi)`` series for every curve of ``figure`` over ``u = 0..u_max``."""
    spec = figure_series(figure)
    curves = _curves([(p, lab) for _, p, lab in spec], u_max, workers)
    return FigureData(figure, np.arange(u_max + 1), {name: c for (name, _, _), c in zip(spec, curves)})


# -- one-shot reproduction ----------------------------------------------------


@dataclass
class ReproductionSummary:
    tables: list[TableReport]
    markov: list[ChainReport]
    out_dir: Optional[Path] = None

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.tables) and all(m.passed for m in self.markov)

    def text(self) -> str:
        parts = [t.diff_text() for t in self.tables]
        parts += [m.diff_line() + "\n" for m in self.markov]
        return "".join(parts)


def reproduce_all(
    out_dir=None,
    tables: Sequence[int] = (1, 2, 3, 4),
    smoke: bool = False,
    figures: bool = True,
    markov: bool = True,
    workers: int = 1,
) -> ReproductionSummary:
    """Run the requested tables (and Markov/figure data), optionally writing files.

    Layout under ``out_dir``: ``tables/table{k}.csv``, ``markov/{principle}_{H|M|L}.csv``,
    ``figures/fig{k}.csv``, ``diffs/table{k}.txt`` and ``diffs/markov.txt``.
    ``smoke`` restricts tables to u in {0, 50, 100} for H1 and L2 and skips figures.
    """
    u_values = SMOKE_U if smoke else None
    labels = SMOKE_SCENARIOS if smoke else None
    reports = [reproduce_table(k, u_values, labels, workers) for k in tables]
    chains = reproduce_markov() if markov else []
    summary = ReproductionSummary(reports, chains)
    if out_dir is None:
        return summary
    out = Path(out_dir)
    summary.out_dir = out
    for sub in ("tables", "markov", "figures", "diffs"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for rep in reports:
        (out / "tables" / f"table{rep.k}.csv").write_text(rep.to_csv())
        (out / "diffs" / f"table{rep.k}.txt").write_text(rep.diff_text())
    if chains:
        for ch in chains:
            write_matrix_csv(out / "markov" / f"{ch.principle.value}_{ch.dist_key}.csv",
                             ch.matrix, CATALOG.scale, ch.stationary)
        (out / "diffs" / "markov.txt").write_text("".join(c.diff_line() + "\n" for c in chains))
    if figures and not smoke:
        for fig in range(1, 9):
            (out / "figures" / f"fig{fig}.csv").write_text(figure_data(fig, workers=workers).to_csv())
    return summary
