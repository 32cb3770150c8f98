import math

from collections import Counter

import numpy as np
import pytest

from phase_tuner.cost_models import ScoreOutcome
from phase_tuner.recipes import Recipe, SpaceConfig, enumerate_space, make_rng
from phase_tuner.search import (CoolingSchedule, AnnealerConfig, GaConfig,
                                TerminalReason, temperature_at,
                                acceptance_probability, accept_step,
                                run_annealing, run_ga, run_exhaustive,
                                crossover, single_point_crossover,
                                uniform_crossover, NOOP_GENE,
                                GEOMETRIC, LINEAR, SINGLE_POINT, DOUBLE_POINT,
                                UNIFORM, SWAP_TWO)

LISTED = {0: 100.000, 1: 79.432, 2: 63.095, 8: 15.848, 9: 12.589, 10: 10.000,
          11: 7.943, 12: 6.309, 18: 1.584, 19: 1.258}


def table_cost(seed, space):
    """
    A deterministic cost table with a unique maximum: 100 minus 10 per
    position differing from a random target, plus noise below 1.
    """
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, space.num_subsequences, size=space.max_length)
    target = ''.join(space.alphabet[i] for i in picks)
    table = {}
    for r in enumerate_space(space):
        mismatches = sum(1 for i in range(space.max_length)
                         if i >= len(r) or r.genes[i] != target[i])
        table[r.genes] = 100.0 - 10 * mismatches + float(rng.random())
    return table


def outcome_of(table):
    def cost(r):
        return ScoreOutcome.success(table[r.genes])
    return cost


def argmax(table):
    return max(table, key=table.get)


@pytest.mark.parametrize("k, expected", sorted(LISTED.items()))
def test_geometric_temperatures(k, expected):
    s = CoolingSchedule(GEOMETRIC, 100.0, 1.0, 20)
    t = temperature_at(s, k)
    assert abs(math.floor(t * 1000 + 1e-6) / 1000 - expected) < 1e-9


def test_geometric_ratio_is_constant():
    s = CoolingSchedule(GEOMETRIC, 100.0, 1.0, 20)
    temps = [temperature_at(s, k) for k in range(20)]
    for a, b in zip(temps, temps[1:]):
        assert b / a == pytest.approx(s.ratio, rel=1e-12)
        assert b < a
    assert min(temps) > 0


def test_linear_temperatures():
    s = CoolingSchedule(LINEAR, 100.0, 0.0, 10)
    assert temperature_at(s, 0) == 100.0
    assert temperature_at(s, 5) == pytest.approx(50.0)
    assert temperature_at(s, 9) == pytest.approx(10.0)


def test_temperature_out_of_range():
    s = CoolingSchedule(GEOMETRIC, 100.0, 1.0, 20)
    with pytest.raises(ValueError):
        temperature_at(s, 20)
    with pytest.raises(ValueError):
        temperature_at(s, -1)


def test_bad_schedules():
    with pytest.raises(ValueError):
        CoolingSchedule(GEOMETRIC, 100.0, 0.0, 20)
    with pytest.raises(ValueError):
        CoolingSchedule(LINEAR, 1.0, 2.0, 20)
    with pytest.raises(ValueError):
        CoolingSchedule(GEOMETRIC, 100.0, 1.0, 0)
    with pytest.raises(ValueError):
        CoolingSchedule('adaptive')
    with pytest.raises(ValueError):
        CoolingSchedule(LINEAR, 0.0, 0.0, 20)
    with pytest.raises(ValueError):
        CoolingSchedule(LINEAR, -5.0, 0.0, 20)


def test_acceptance_probability():
    assert acceptance_probability(1.06, 1.05, 5.0) == 1.0
    assert acceptance_probability(1.05, 1.05, 5.0) == 1.0
    p = acceptance_probability(1.01, 1.04, 12.589)
    assert p == pytest.approx(math.exp(-0.03 / 12.589))
    assert p == pytest.approx(0.99762, abs=1e-5)


def test_acceptance_probability_monotone():
    assert (acceptance_probability(1.0, 2.0, 1.0) <
            acceptance_probability(1.0, 2.0, 10.0) <
            acceptance_probability(1.0, 2.0, 100.0))
    assert (acceptance_probability(1.0, 3.0, 10.0) <
            acceptance_probability(1.0, 2.0, 10.0))


def test_acceptance_probability_errors():
    with pytest.raises(ValueError):
        acceptance_probability(1.0, 2.0, 0.0)
    with pytest.raises(ValueError):
        acceptance_probability(math.nan, 2.0, 1.0)
    with pytest.raises(ValueError):
        acceptance_probability(1.0, math.inf, 1.0)


def test_accept_step_extremes():
    rng = make_rng(0)
    assert all(accept_step(1.0, rng) for _ in range(1000))
    assert not any(accept_step(0.0, rng) for _ in range(1000))


def test_accept_step_half():
    rng = make_rng(123)
    rate = sum(accept_step(0.5, rng) for _ in range(100000)) / 100000
    assert abs(rate - 0.5) < 0.01


@pytest.mark.parametrize("delta", [-0.01, -0.05, -0.2])
@pytest.mark.parametrize("temperature", [1.0, 10.0, 100.0])
def test_acceptance_rate_matches_metropolis(delta, temperature):
    rng = make_rng(2024)
    prob = acceptance_probability(1.0 + delta, 1.0, temperature)
    rate = sum(accept_step(prob, rng) for _ in range(100000)) / 100000
    assert abs(rate - math.exp(delta / temperature)) < 0.01


def test_annealer_config_defaults():
    cfg = AnnealerConfig()
    assert (cfg.max_iterations, cfg.initial_sample_size, cfg.rng_seed,
            cfg.stall_limit) == (100, 20, 123, 10)
    assert cfg.cooling == CoolingSchedule(GEOMETRIC, 100.0, 1.0, 100)
    with pytest.raises(ValueError):
        AnnealerConfig(CoolingSchedule(max_iterations=20), max_iterations=30)


def test_ga_config_validation():
    cfg = GaConfig()
    assert (cfg.population_size, cfg.mutation_rate, cfg.crossover_rate,
            cfg.elitism, cfg.tournament_size) == (10, 0.05, 0.95, 1, 2)
    with pytest.raises(ValueError):
        GaConfig(mutation_rate=1.5)
    with pytest.raises(ValueError):
        GaConfig(crossover_rate=-0.1)
    with pytest.raises(ValueError):
        GaConfig(population_size=4, elitism=4)
    with pytest.raises(ValueError):
        GaConfig(tournament_size=0)


def check_trace(trace):
    iterations = [row.iteration for row in trace.rows]
    assert iterations == list(range(len(iterations)))
    best = [row.best_cost for row in trace.rows]
    assert best == sorted(best)


def test_annealing_starts_from_canonical():
    space = SpaceConfig(5, 3)
    table = table_cost(1, space)
    cfg = AnnealerConfig(CoolingSchedule(max_iterations=20), max_iterations=20)
    best, best_cost, trace = run_annealing(cfg, space, outcome_of(table))
    first = trace.rows[0]
    assert first.current == first.next == Recipe('ABC')
    assert first.temperature == 100.0
    assert trace.engine == 'anneal'
    assert best_cost == table[best.genes]
    check_trace(trace)


def test_best_column_shows_best_before_the_row():
    space = SpaceConfig(5, 5)

    def cost(r):
        return ScoreOutcome.success(1.05 if r == Recipe('ABCDE') else 1.06)

    cfg = AnnealerConfig(CoolingSchedule(max_iterations=20), max_iterations=20,
                         initial_sample_size=0, stall_limit=0)
    best, best_cost, trace = run_annealing(cfg, space, cost)
    k = next(row.iteration for row in trace.rows if row.next_cost == 1.06)
    improving, following = trace.rows[k], trace.rows[k + 1]
    assert (improving.best, improving.best_cost) == (Recipe('ABCDE'), 1.05)
    assert (following.best, following.best_cost) == (improving.next, 1.06)
    assert (trace.best, trace.best_cost) == (best, best_cost) == (improving.next, 1.06)


def test_annealing_is_reproducible():
    space = SpaceConfig(5, 5)
    table = {r.genes: 1.0 + (hash(r.genes) % 97) / 100 for r in enumerate_space(space)}
    cfg = AnnealerConfig(CoolingSchedule(max_iterations=50), max_iterations=50)
    first = run_annealing(cfg, space, outcome_of(table))
    second = run_annealing(cfg, space, outcome_of(table))
    assert first[0] == second[0]
    assert first[2].rows == second[2].rows
    assert first[2].terminal_reason == second[2].terminal_reason


def test_annealing_finds_table_maximum():
    space = SpaceConfig(5, 3)
    found = 0
    for seed in range(100):
        table = table_cost(seed, space)
        cfg = AnnealerConfig(CoolingSchedule(max_iterations=500), max_iterations=500,
                             rng_seed=seed, stall_limit=0)
        best, best_cost, trace = run_annealing(cfg, space, outcome_of(table))
        check_trace(trace)
        found += best.genes == argmax(table)
    assert found >= 95


def test_annealing_constant_cost():
    space = SpaceConfig(5, 3)
    cfg = AnnealerConfig(CoolingSchedule(max_iterations=40), max_iterations=40)
    best, best_cost, trace = run_annealing(cfg, space,
                                           lambda r: ScoreOutcome.success(2.5))
    assert best == Recipe('ABC')
    assert best_cost == 2.5
    assert set(row.best_cost for row in trace.rows) == {2.5}
    # nothing ever improves
    assert trace.terminal_reason == TerminalReason.EarlyExitStall
    assert len(trace.rows) == 11


def test_annealing_rejects_failed_recipes():
    space = SpaceConfig(5, 3)

    def cost(r):
        if r == Recipe('ABC'):
            return ScoreOutcome.success(1.0)
        return ScoreOutcome.failed("crash")

    cfg = AnnealerConfig(CoolingSchedule(max_iterations=30), max_iterations=30,
                         stall_limit=0)
    best, best_cost, trace = run_annealing(cfg, space, cost)
    assert best == Recipe('ABC')
    assert best_cost == 1.0
    proposed = trace.rows[1:]
    assert trace.failures == sum(row.next != Recipe('ABC') for row in proposed)
    for row in trace.rows:
        assert row.best == Recipe('ABC')
        # never accepted
        assert row.current == Recipe('ABC')


def test_annealing_all_failed():
    space = SpaceConfig(3, 2)
    cfg = AnnealerConfig(CoolingSchedule(max_iterations=5), max_iterations=5)
    best, best_cost, trace = run_annealing(cfg, space,
                                           lambda r: ScoreOutcome.failed("crash"))
    assert best is None
    assert best_cost == -math.inf
    assert all(row.best is None for row in trace.rows)


def test_annealing_stall_test_hook():
    space = SpaceConfig(5, 3)
    table = table_cost(3, space)
    cfg = AnnealerConfig(CoolingSchedule(max_iterations=100), max_iterations=100,
                         stall_limit=3)
    calls = []

    def stall_test(proposal, outcome, best):
        calls.append(proposal)
        return True

    best, best_cost, trace = run_annealing(cfg, space, outcome_of(table), stall_test)
    assert trace.terminal_reason == TerminalReason.EarlyExitStall
    assert len(calls) == 3
    assert len(trace.rows) == 4


def test_annealing_small_space_completes_enumeration():
    space = SpaceConfig(2, 1)
    table = {'': 1.0, 'A': 2.0, 'B': 3.0}
    cfg = AnnealerConfig(CoolingSchedule(max_iterations=100), max_iterations=100,
                         stall_limit=0)
    best, best_cost, trace = run_annealing(cfg, space, outcome_of(table))
    assert trace.terminal_reason == TerminalReason.EnumerationComplete
    assert best == Recipe('B')


def test_single_point_crossover():
    assert single_point_crossover('AAAAA', 'BBBBB', 2) == ('AABBB', 'BBAAA')


def test_uniform_crossover_without_swaps():
    assert uniform_crossover('ABCDE', 'EDCBA', [False] * 5) == ('ABCDE', 'EDCBA')
    assert uniform_crossover('ABCDE', 'EDCBA', [True] * 5) == ('EDCBA', 'ABCDE')


@pytest.mark.parametrize("kind", [SINGLE_POINT, DOUBLE_POINT, UNIFORM])
def test_crossover_keeps_genes(kind):
    space = SpaceConfig(5, 5)
    for seed in range(2000):
        rng = make_rng(seed)
        a = Recipe('ABCDE'[:seed % 6])
        b = Recipe('EDCBA'[:(seed // 6) % 6])
        ca, cb = crossover(a, b, kind, space, rng)
        ca.check(space)
        cb.check(space)
        assert NOOP_GENE not in ca.genes + cb.genes
        assert Counter(ca.genes + cb.genes) == Counter(a.genes + b.genes)


def test_double_point_on_short_genomes_falls_back():
    space = SpaceConfig(2, 2)
    ca, cb = crossover(Recipe('AA'), Recipe('BB'), DOUBLE_POINT, space, make_rng(0))
    assert (ca, cb) == (Recipe('AB'), Recipe('BA'))


def test_ga_finds_table_maximum():
    space = SpaceConfig(5, 3)
    found = 0
    for seed in range(100):
        table = table_cost(seed, space)
        # oracle settings: with the shipped population of 10 and mutation rate
        # of 0.05 the population converges early on this table
        cfg = GaConfig(population_size=20, mutation_rate=0.25, generations=40,
                       rng_seed=seed)
        best, best_cost, trace = run_ga(cfg, space, outcome_of(table))
        check_trace(trace)
        found += best.genes == argmax(table)
    assert found >= 95


def test_ga_population_size_is_constant():
    space = SpaceConfig(5, 5)
    table = {r.genes: 1.0 + len(r) for r in enumerate_space(space)}
    sizes = []
    cfg = GaConfig(population_size=7, generations=12, mutation=SWAP_TWO, elitism=2)
    best, best_cost, trace = run_ga(cfg, space, outcome_of(table),
                                    observer=lambda g, pop: sizes.append(len(pop)))
    assert sizes == [7] * 12
    assert len(trace.rows) == 12
    assert all(row.temperature == 0 for row in trace.rows)
    assert trace.engine == 'ga'


def test_ga_degenerate_dynamics_converge_to_elite():
    space = SpaceConfig(5, 3)
    table = table_cost(9, space)
    populations = []
    cfg = GaConfig(population_size=4, mutation_rate=0.0, crossover_rate=0.0,
                   elitism=3, generations=100, rng_seed=5)
    best, best_cost, trace = run_ga(cfg, space, outcome_of(table),
                                    observer=lambda g, pop: populations.append(pop))
    check_trace(trace)
    assert len(set(populations[-1])) == 1
    assert populations[-1][0] == best


def test_ga_rejects_failed_recipes():
    space = SpaceConfig(5, 3)

    def cost(r):
        if len(r) % 2:
            return ScoreOutcome.failed("crash")
        return ScoreOutcome.success(1.0 + len(r))

    best, best_cost, trace = run_ga(GaConfig(generations=8), space, cost)
    assert len(best) % 2 == 0
    for row in trace.rows:
        assert row.best is None or len(row.best) % 2 == 0


def test_ga_is_reproducible():
    space = SpaceConfig(5, 5)
    table = {r.genes: 1.0 + (hash(r.genes) % 89) / 100 for r in enumerate_space(space)}
    cfg = GaConfig(generations=15, rng_seed=42)
    assert run_ga(cfg, space, outcome_of(table))[2].rows == \
        run_ga(cfg, space, outcome_of(table))[2].rows


def test_exhaustive_search():
    space = SpaceConfig(5, 3)
    table = table_cost(4, space)
    best, best_cost, trace = run_exhaustive(space, outcome_of(table))
    assert best.genes == argmax(table)
    assert best_cost == max(table.values())
    assert len(trace.rows) == 156
    assert trace.terminal_reason == TerminalReason.EnumerationComplete
    assert trace.engine == 'exhaustive'
    check_trace(trace)
