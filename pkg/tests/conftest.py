import numpy as np
import pytest

from ruinlab.bonus_malus import PremiumScale, Principle, RuleSet
from ruinlab.claims import TablePMF
from ruinlab.ruin_engine import RuinQuery

ALL_PRINCIPLES = list(Principle)


def random_table(rng: np.random.Generator, support: int = 3, max_cells: int = 5) -> TablePMF:
    """Random finite joint pmf on ``{0..support-1}^2`` honouring ``f(0, y>0) = 0``."""
    cells = [(0, 0)] + [(x, y) for x in range(1, support) for y in range(support)]
    n = int(rng.integers(2, min(max_cells, len(cells)) + 1))
    pick = rng.choice(len(cells), size=n, replace=False)
    w = rng.random(n) + 0.05
    w /= w.sum()
    return TablePMF({cells[k]: float(p) for k, p in zip(pick, w)})


def random_rules(rng: np.random.Generator, principle: Principle, n_levels: int) -> RuleSet:
    top = 3 if principle.is_count else 6
    a = int(rng.integers(0, top))
    b = int(rng.integers(a, top + 1))
    return RuleSet.threshold(a, b, n_levels)


def random_query(
    rng: np.random.Generator,
    principle: Principle,
    q: float,
    horizon_max: int = 4,
    u_max: int = 4,
    support: int = 3,
    emit_grid: bool = False,
) -> RuinQuery:
    n_levels = int(rng.integers(1, 4))
    levels = tuple(sorted(int(c) for c in rng.choice(np.arange(1, 7), n_levels, replace=False)))
    return RuinQuery(
        principle,
        random_table(rng, support),
        q,
        PremiumScale(levels),
        random_rules(rng, principle, n_levels),
        int(rng.integers(0, u_max + 1)),
        int(rng.integers(1, n_levels + 1)),
        int(rng.integers(1, horizon_max + 1)),
        emit_grid=emit_grid,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def _grid_values(result):
    q = result.query
    for layer in result.table:
        if layer.n == 0:
            continue
        for i in range(1, len(q.scale) + 1):
            yield layer, i


def check_invariants(result, check_z=True):
    """Range, monotonicity in u, n and z, and the reduction for reported principles."""
    q = result.query
    layers = [lay for lay in result.table if lay.n > 0]
    u_top = q.u_top
    for layer, i in _grid_values(result):
        c_i = q.scale.premium(i)
        curve = layer.psi_curve(i, u_top)
        assert ((curve >= -1e-15) & (curve <= 1 + 1e-12)).all()
        assert (np.diff(curve) <= 1e-12).all(), "psi increased in u"
        for u in range(u_top + 1):
            vals = [layer.psi_prime(i, u, z) for z in range(1, u + c_i + 2)]
            assert all(-1e-15 <= v <= 1 + 1e-12 for v in vals)
            if check_z:
                assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:])), "psi' decreased in z"
            if q.principle.is_reported:
                for z in range(1, u + 1):
                    assert layer.psi_prime(i, u, z) == layer.psi(i, u - z)
    for lo, hi in zip(layers, layers[1:]):
        for i in range(1, len(q.scale) + 1):
            assert (hi.psi_curve(i, u_top) >= lo.psi_curve(i, u_top) - 1e-12).all(), "psi decreased in n"


# -- acceptance report ---------------------------------------------------------

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line for an acceptance criterion; shown in the terminal summary."""

    def record(number, name, passed, detail=""):
        line = f"criterion {number} [{name}]: {'PASS' if passed else 'FAIL'}"
        if detail:
            line += f" - {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
