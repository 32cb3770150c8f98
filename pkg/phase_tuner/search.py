"""
Search engines over recipes.

Every engine takes a cost callback ``Recipe -> ScoreOutcome`` and returns
``(best, best_cost, trace)``.  Failed outcomes are rejected: they are
never accepted as the current state and never become the best recipe.
An infrastructure error raised by the callback aborts the search.
"""
import math

from dataclasses import dataclass, field

from .recipes import (Recipe, SpaceTooLarge, space_size, random_recipe,
                      mutate_flip_one, mutate_swap_two, neighbor,
                      enumerate_space, make_rng, ENUMERATION_CAP)

# reserved gene padding genomes to the maximum length during crossover
NOOP_GENE = '·'

GEOMETRIC = 'geometric'
LINEAR = 'linear'

SINGLE_POINT = 'single-point'
DOUBLE_POINT = 'double-point'
UNIFORM = 'uniform'
crossover_types = [SINGLE_POINT, DOUBLE_POINT, UNIFORM]

FLIP_ONE = 'flip-one'
SWAP_TWO = 'swap-two'
mutation_types = [FLIP_ONE, SWAP_TWO]


class TerminalReason(object):
    IterationsExhausted = "IterationsExhausted"
    EarlyExitStall = "EarlyExitStall"
    EnumerationComplete = "EnumerationComplete"


@dataclass(frozen=True)
class CoolingSchedule:
    kind: str = GEOMETRIC
    t_max: float = 100.0
    t_floor: float = 1.0
    max_iterations: int = 100

    def __post_init__(self):
        if self.kind not in (GEOMETRIC, LINEAR):
            raise ValueError("unknown cooling schedule {!r}".format(self.kind))
        if self.max_iterations < 1:
            raise ValueError("the schedule needs at least one iteration")
        if not self.t_max > 0:
            raise ValueError("the maximum temperature must be positive")
        if self.kind == GEOMETRIC and self.t_floor <= 0:
            raise ValueError("geometric cooling needs a positive floor temperature")
        if self.t_floor < 0 or self.t_max < self.t_floor:
            raise ValueError("temperatures must satisfy 0 <= t_floor <= t_max")

    @property
    def ratio(self):
        return (self.t_floor / self.t_max) ** (1.0 / self.max_iterations)


def temperature_at(s, k):
    """
    Return the temperature of iteration ``k``.

    EXAMPLES::

        >>> s = CoolingSchedule(GEOMETRIC, 100.0, 1.0, 20)
        >>> round(temperature_at(s, 1), 3)
        79.433
    """
    if not 0 <= k < s.max_iterations:
        raise ValueError("iteration {} outside 0..{}".format(k, s.max_iterations - 1))
    if s.kind == GEOMETRIC:
        return s.t_max * s.ratio ** k
    return s.t_max - k * (s.t_max - s.t_floor) / s.max_iterations


def acceptance_probability(next_cost, present_cost, temperature):
    """
    Metropolis acceptance for a maximised score: ``1`` on improvement,
    ``exp((next - present) / T)`` otherwise.
    """
    if not all(math.isfinite(x) for x in (next_cost, present_cost, temperature)):
        raise ValueError("acceptance needs finite costs and temperature")
    if temperature <= 0:
        raise ValueError("acceptance needs a positive temperature")
    if next_cost > present_cost:
        return 1.0
    return math.exp((next_cost - present_cost) / temperature)


def accept_step(prob, rng):
    return rng.random() < prob


@dataclass(frozen=True)
class AnnealerConfig:
    """
    Settings of ``run_annealing``.  A ``stall_limit`` of 0 disables the
    early exit.
    """
    cooling: CoolingSchedule = None
    max_iterations: int = 100
    initial_sample_size: int = 20
    rng_seed: int = 123
    stall_limit: int = 10

    def __post_init__(self):
        if self.cooling is None:
            object.__setattr__(self, 'cooling',
                               CoolingSchedule(max_iterations=self.max_iterations))
        elif self.cooling.max_iterations != self.max_iterations:
            raise ValueError("the cooling schedule spans {} iterations, not {}".format(
                self.cooling.max_iterations, self.max_iterations))


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 10
    mutation_rate: float = 0.05
    crossover_rate: float = 0.95
    crossover: str = SINGLE_POINT
    mutation: str = FLIP_ONE
    generations: int = 10
    elitism: int = 1
    tournament_size: int = 2
    rng_seed: int = 123

    def __post_init__(self):
        for name in ('mutation_rate', 'crossover_rate'):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError("{} must lie in [0, 1]".format(name))
        if self.population_size < 1 or not 0 <= self.elitism < self.population_size:
            raise ValueError("elitism must be smaller than the population size")
        if self.tournament_size < 1:
            raise ValueError("the tournament size must be at least 1")
        if self.generations < 1:
            raise ValueError("at least one generation is needed")
        if self.crossover not in crossover_types:
            raise ValueError("unknown crossover {!r}".format(self.crossover))
        if self.mutation not in mutation_types:
            raise ValueError("unknown mutation {!r}".format(self.mutation))


@dataclass
class SearchState:
    current: Recipe
    current_cost: float
    best: Recipe = None
    best_cost: float = -math.inf
    iteration: int = 0
    temperature: float = 0.0
    failures: int = 0

    def offer(self, recipe, outcome):
        """
        Update the best recipe; return whether it improved.  Ties keep the
        recipe found first.
        """
        if outcome.ok and outcome.score > self.best_cost:
            self.best, self.best_cost = recipe, outcome.score
            return True
        return False


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    current: Recipe
    next: Recipe
    best: Recipe
    current_cost: float
    next_cost: float
    best_cost: float
    temperature: float


@dataclass
class SearchTrace:
    rows: list = field(default_factory=list)
    terminal_reason: str = TerminalReason.IterationsExhausted
    engine: str = 'anneal'
    failures: int = 0
    evaluations: int = 0
    best: Recipe = None
    best_cost: float = -math.inf


def _space_total(space):
    try:
        return space_size(space)
    except SpaceTooLarge:
        return None


class _Evaluator(object):
    """
    Wraps the cost callback to count calls and distinct recipes.
    """
    def __init__(self, cost, memo=False):
        self.cost = cost
        self.seen = set()
        self.calls = 0
        self.memo = {} if memo else None

    def __call__(self, recipe):
        self.seen.add(recipe.genes)
        if self.memo is not None and recipe.genes in self.memo:
            return self.memo[recipe.genes]
        self.calls += 1
        outcome = self.cost(recipe)
        if self.memo is not None:
            self.memo[recipe.genes] = outcome
        return outcome


def _cost_or(outcome, default=-math.inf):
    return outcome.score if outcome.ok else default


def run_annealing(cfg, space, cost, stall_test=None):
    """
    Simulated annealing from the canonical recipe.

    INPUT:

    - ``cfg`` -- an ``AnnealerConfig``

    - ``space`` -- a ``SpaceConfig``

    - ``cost`` -- callback ``Recipe -> ScoreOutcome``

    - ``stall_test`` -- (optional) callback ``(proposal, outcome, best) ->
      bool`` telling whether a proposal counts towards the early exit,
      given the best recipe before the proposal was scored; by default a
      proposal stalls when it does not improve the best recipe

    OUTPUT:

    ``(best, best_cost, trace)``; ``best`` is ``None`` if every evaluation
    failed

    Before the loop, ``initial_sample_size`` random recipes are evaluated;
    they may become the best recipe but never the current one.  Row ``k``
    of the trace shows the current state before that iteration's
    acceptance decision, and the best recipe found before it.
    """
    schedule = cfg.cooling
    rng = make_rng(cfg.rng_seed)
    evaluate = _Evaluator(cost)
    total = _space_total(space)

    canonical = Recipe(space.alphabet[:space.max_length])
    first = evaluate(canonical)
    state = SearchState(canonical, _cost_or(first))
    state.offer(canonical, first)
    for _ in range(cfg.initial_sample_size):
        sample = random_recipe(space, rng)
        state.offer(sample, evaluate(sample))

    trace = SearchTrace(engine='anneal')
    stall = 0
    for k in range(schedule.max_iterations):
        temperature = temperature_at(schedule, k)
        state.iteration, state.temperature = k, temperature
        if k == 0:
            proposal, outcome = canonical, first
        else:
            proposal = neighbor(state.current, space, temperature, schedule.t_max, rng)
            outcome = evaluate(proposal)

        incumbent, incumbent_cost = state.best, state.best_cost
        improved = False
        if outcome.ok:
            improved = state.offer(proposal, outcome)
            if k == 0 or state.current_cost == -math.inf:
                accepted = True
            else:
                prob = acceptance_probability(outcome.score, state.current_cost,
                                              temperature)
                accepted = accept_step(prob, rng)
        else:
            accepted = False
            if k > 0:
                state.failures += 1

        trace.rows.append(TraceRow(k, state.current, proposal, incumbent,
                                   state.current_cost, _cost_or(outcome, math.nan),
                                   incumbent_cost, temperature))
        if accepted:
            state.current, state.current_cost = proposal, outcome.score

        if k > 0 and cfg.stall_limit:
            if stall_test is None:
                stalled = not improved
            else:
                stalled = stall_test(proposal, outcome, incumbent)
            stall = stall + 1 if stalled else 0
            if stall >= cfg.stall_limit:
                trace.terminal_reason = TerminalReason.EarlyExitStall
                break
        if total is not None and len(evaluate.seen) >= total:
            trace.terminal_reason = TerminalReason.EnumerationComplete
            break

    trace.failures = state.failures
    trace.evaluations = evaluate.calls
    trace.best, trace.best_cost = state.best, state.best_cost
    return state.best, state.best_cost, trace


def _pad(r, length):
    return r.genes + NOOP_GENE * (length - len(r))


def _strip(genes):
    return Recipe(genes.replace(NOOP_GENE, ''))


def single_point_crossover(pa, pb, cut):
    """
    Swap the tails of two padded genomes after position ``cut``.

    EXAMPLES::

        >>> single_point_crossover('AAAAA', 'BBBBB', 2)
        ('AABBB', 'BBAAA')
    """
    return pa[:cut] + pb[cut:], pb[:cut] + pa[cut:]


def double_point_crossover(pa, pb, first, second):
    return (pa[:first] + pb[first:second] + pa[second:],
            pb[:first] + pa[first:second] + pb[second:])


def uniform_crossover(pa, pb, mask):
    """
    Swap the positions where ``mask`` is true.
    """
    ca = ''.join(b if swap else a for a, b, swap in zip(pa, pb, mask))
    cb = ''.join(a if swap else b for a, b, swap in zip(pa, pb, mask))
    return ca, cb


def crossover(a, b, kind, cfg, rng):
    """
    Recombine two recipes.

    Both genomes are padded with the no-op gene to the maximum length, so
    parents of different lengths line up position by position; the
    padding is removed from the children.
    """
    m = cfg.max_length
    pa, pb = _pad(a, m), _pad(b, m)
    if kind == DOUBLE_POINT and m >= 3:
        first, second = sorted(int(x) for x in rng.choice(range(1, m), size=2,
                                                          replace=False))
        ca, cb = double_point_crossover(pa, pb, first, second)
    elif kind == UNIFORM:
        ca, cb = uniform_crossover(pa, pb, rng.random(m) < 0.5)
    elif kind in (SINGLE_POINT, DOUBLE_POINT):
        if m < 2:
            return a, b
        ca, cb = single_point_crossover(pa, pb, int(rng.integers(1, m)))
    else:
        raise ValueError("unknown crossover {!r}".format(kind))
    return _strip(ca), _strip(cb)


def _tournament(population, fitness, size, rng):
    picks = [int(i) for i in rng.integers(0, len(population), size=size)]
    return population[max(picks, key=lambda i: (fitness[i], -i))]


def _mutate(r, cfg, space, rng):
    if cfg.mutation == SWAP_TWO:
        return mutate_swap_two(r, rng)
    return mutate_flip_one(r, space, rng)


def run_ga(cfg, space, cost, observer=None):
    """
    The genetic recommender.

    Generation 0 is the canonical recipe plus random recipes.  Each new
    generation keeps the ``elitism`` fittest recipes unchanged and fills
    the rest with children of tournament-selected parents.  A failed
    recipe has fitness ``-inf``.

    One trace row per generation: the previous and current generation
    bests, the overall best, and a temperature of 0.  ``observer``, if
    given, is called with ``(generation, population)``.
    """
    rng = make_rng(cfg.rng_seed)
    evaluate = _Evaluator(cost, memo=True)
    total = _space_total(space)
    size = cfg.population_size

    canonical = Recipe(space.alphabet[:space.max_length])
    population = [canonical] + [random_recipe(space, rng) for _ in range(size - 1)]
    state = SearchState(canonical, -math.inf)
    trace = SearchTrace(engine='ga')
    failed = set()
    previous = None

    for generation in range(cfg.generations):
        if observer is not None:
            observer(generation, list(population))
        outcomes = [evaluate(r) for r in population]
        fitness = [_cost_or(o) for o in outcomes]
        failed.update(r.genes for r, o in zip(population, outcomes) if not o.ok)
        leader = max(range(size), key=lambda i: (fitness[i], -i))
        for r, o in zip(population, outcomes):
            state.offer(r, o)
        if previous is None:
            previous = (population[leader], fitness[leader])
        trace.rows.append(TraceRow(generation, previous[0], population[leader],
                                   state.best, previous[1], fitness[leader],
                                   state.best_cost, 0.0))
        previous = (population[leader], fitness[leader])

        if total is not None and len(evaluate.seen) >= total:
            trace.terminal_reason = TerminalReason.EnumerationComplete
            break
        if generation == cfg.generations - 1:
            break

        ranked = sorted(range(size), key=lambda i: (-fitness[i], i))
        children = [population[i] for i in ranked[:cfg.elitism]]
        while len(children) < size:
            a = _tournament(population, fitness, cfg.tournament_size, rng)
            b = _tournament(population, fitness, cfg.tournament_size, rng)
            if rng.random() < cfg.crossover_rate:
                a, b = crossover(a, b, cfg.crossover, space, rng)
            for child in (a, b):
                if len(children) == size:
                    break
                if rng.random() < cfg.mutation_rate:
                    child = _mutate(child, cfg, space, rng)
                children.append(child)
        population = children

    trace.failures = len(failed)
    trace.evaluations = evaluate.calls
    trace.best, trace.best_cost = state.best, state.best_cost
    return state.best, state.best_cost, trace


def run_exhaustive(space, cost, cap=ENUMERATION_CAP):
    """
    Iterative compilation: evaluate every recipe of the space and keep the
    best.  One trace row per recipe, in enumeration order.
    """
    evaluate = _Evaluator(cost)
    state = SearchState(Recipe(), -math.inf)
    trace = SearchTrace(engine='exhaustive',
                        terminal_reason=TerminalReason.EnumerationComplete)
    for k, recipe in enumerate(enumerate_space(space, cap)):
        outcome = evaluate(recipe)
        if not outcome.ok:
            state.failures += 1
        current, current_cost = state.best, state.best_cost
        state.offer(recipe, outcome)
        trace.rows.append(TraceRow(k, current, recipe, state.best, current_cost,
                                   _cost_or(outcome, math.nan), state.best_cost, 0.0))
    trace.failures = state.failures
    trace.evaluations = evaluate.calls
    trace.best, trace.best_cost = state.best, state.best_cost
    return state.best, state.best_cost, trace
