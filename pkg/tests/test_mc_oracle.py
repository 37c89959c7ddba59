import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import random_query
from ruinlab.bonus_malus import PremiumScale, Principle, RuleSet
from ruinlab.claims import BUILTIN, TablePMF
from ruinlab.errors import EnumerationBudgetError, ValidationError
from ruinlab.experiments import CATALOG
from ruinlab.mc_oracle import (
    CHUNK_PATHS,
    MCEstimate,
    SimState,
    default_workers,
    exact_enumerate,
    settle_period,
    simulate,
    simulate_many,
    trigger_value,
)
from ruinlab.ruin_engine import RuinQuery, ruin_probability


def test_settle_period_cases():
    s = SimState(surplus=10, level=2, pending_by_claim=0)
    assert settle_period(s, 0, 0, False, 5) == (0, 15, 0)
    assert settle_period(s, 3, 0, False, 5) == (3, 12, 0)
    assert settle_period(s, 3, 4, False, 5) == (7, 8, 0)
    assert settle_period(s, 3, 4, True, 5) == (3, 12, 4)
    p = SimState(surplus=10, level=2, pending_by_claim=6)
    assert settle_period(p, 0, 0, False, 5) == (6, 9, 0)
    assert settle_period(p, 2, 3, True, 5) == (8, 7, 3)
    assert settle_period(p, 2, 3, False, 5) == (11, 4, 0)


def test_trigger_values():
    assert trigger_value(Principle.AGGREGATE_REPORTED, 2, 3, True, 5) == 5
    assert trigger_value(Principle.AGGREGATE_SETTLED, 2, 3, True, 5) == 7
    assert trigger_value(Principle.AGGREGATE_SETTLED, 2, 3, False, 0) == 5
    assert trigger_value(Principle.REPORTED_COUNT, 2, 3, True, 5) == 2
    assert trigger_value(Principle.REPORTED_COUNT, 2, 0, False, 5) == 1
    assert trigger_value(Principle.SETTLED_COUNT, 2, 3, True, 5) == 2
    assert trigger_value(Principle.SETTLED_COUNT, 2, 3, False, 5) == 3
    assert trigger_value(Principle.SETTLED_COUNT, 0, 0, False, 0) == 0


def test_estimate_fields():
    est = MCEstimate.from_count(25, 100, seed=3)
    assert est.p_hat == 0.25
    assert est.stderr == pytest.approx(math.sqrt(0.25 * 0.75 / 100))
    assert est.ci95[0] < 0.25 < est.ci95[1]
    d = est.as_dict()
    assert set(d) == {"p_hat", "stderr", "ci95", "n_paths", "seed", "rng_id"}
    assert "PCG64" in d["rng_id"]


def _query(principle=Principle.AGGREGATE_SETTLED, label="H2", u0=0):
    return replace(CATALOG.query(principle, label, u_max=0), u0=u0)


def test_simulation_is_seeded_and_worker_independent():
    q = _query()
    a = simulate(q, CHUNK_PATHS + 1234, seed=11, workers=1)
    b = simulate(q, CHUNK_PATHS + 1234, seed=11, workers=2)
    c = simulate(q, CHUNK_PATHS + 1234, seed=12, workers=1)
    assert a.p_hat == b.p_hat and a.n_paths == CHUNK_PATHS + 1234
    assert a.p_hat != c.p_hat


def test_common_paths_across_surpluses():
    q = _query(Principle.REPORTED_COUNT, "M1")
    many = simulate_many(q, [0, 10, 30], 50_000, seed=5)
    assert many[0].p_hat >= many[1].p_hat >= many[2].p_hat
    assert simulate(replace(q, u0=10), 50_000, seed=5).p_hat == many[1].p_hat


def test_simulation_validation_and_trivial_cases():
    with pytest.raises(ValidationError, match="paths must be ≥ 1"):
        simulate(_query(), 0, seed=1)
    assert simulate(replace(_query(), horizon=0), 10, seed=1).p_hat == 0.0
    assert simulate(replace(_query(), u0=-1), 10, seed=1).p_hat == 1.0


def test_default_workers_env(monkeypatch):
    monkeypatch.delenv("RUINLAB_WORKERS", raising=False)
    assert default_workers() == 1
    monkeypatch.setenv("RUINLAB_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("RUINLAB_WORKERS", "many")
    with pytest.raises(ValidationError):
        default_workers()


@pytest.mark.parametrize("principle", list(Principle))
def test_simulation_agrees_with_solver_on_small_instance(principle):
    rng = np.random.default_rng(7 + list(Principle).index(principle))
    q = random_query(rng, principle, 0.3, horizon_max=4, u_max=3, support=4)
    q = replace(q, horizon=4)
    exact = ruin_probability(q).value
    est = simulate(q, 200_000, seed=99)
    assert abs(est.p_hat - exact) <= 4 * max(est.stderr, 1e-6)


def test_exact_enumeration_basic():
    d = TablePMF({(0, 0): 0.5, (2, 1): 0.5})
    scale = PremiumScale((1,))
    rules = RuleSet.threshold(0, 0, 1)
    q = RuinQuery("aggregate_reported", d, 0.0, scale, rules, 1, 1, 1)
    # one period: funds 2, claim 2 + 1 = 3 undelayed -> ruin with prob 0.5
    assert exact_enumerate(q) == pytest.approx(0.5)
    assert exact_enumerate(replace(q, q=1.0)) == 0.0
    # with the by-claim deferred: surplus 0 after period one, then pending 1 + X=2 > 1
    assert exact_enumerate(replace(q, q=1.0, horizon=2)) == pytest.approx(0.5 * 0.5)
    assert exact_enumerate(replace(q, u0=-2)) == 1.0
    assert exact_enumerate(replace(q, horizon=0)) == 0.0


def test_exact_enumeration_guards():
    with pytest.raises(ValidationError):
        exact_enumerate(_query())
    rng = np.random.default_rng(1)
    q = replace(random_query(rng, Principle.SETTLED_COUNT, 0.3, support=3), horizon=10)
    with pytest.raises(EnumerationBudgetError):
        exact_enumerate(q, budget=1e3)


def test_sampler_overflow_is_tiny_for_builtins():
    est = simulate(_query(), 1000, seed=0)
    assert est.metadata["overflow_mass"] < BUILTIN["H"]().truncation_epsilon
