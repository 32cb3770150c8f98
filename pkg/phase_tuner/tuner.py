# -*- coding: utf-8 -*-
"""
Main driver of the phase tuner.

The tuner splits its inputs into partitions (one per IR file), searches a
recipe for each partition with the configured engine, applies recipes
through an external optimizer and scores the results with the configured
cost model.  Configuration is done via an optional config file passed on
the command line, overridden by the command-line options.
"""
import codecs
import json
import math
import multiprocessing
import os
import pprint
import shutil
import subprocess
import sys
import tempfile
import threading
import time

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

# imports from the tuner sources
import phase_tuner
from .cost_models import (CostModel, LinearModel, Baseline, HistoryBuffer,
                          ScoreOutcome, count_instructions, measure_cycles,
                          MCA_PATTERN)
from .features import FeatureSchema, collect_features, dump_features_csv, feature_vector
from .ir_model import parse_ir, file_fingerprint, IrParseError
from .recipes import (Recipe, RecipeError, SpaceConfig, SubsequenceLibrary,
                      canonical_recipe, expand_recipe, ENUMERATION_CAP)
from .search import (AnnealerConfig, CoolingSchedule, GaConfig, SearchTrace,
                     run_annealing, run_ga, run_exhaustive)
from .util import (now_str, excerpt, split_template, fill_template,
                   check_template, check_executable,
                   ConfigException, InfrastructureError)

# name of the log files
LOG_MAIN = ('tuner.log', sys.stdout)
LOG_CONFIG = 'config.txt'
LOG_SUMMARY = 'summary.txt'

# per partition, under its work directory
LOG_OPTIMIZER = 'optimizer.log'
LOG_TRACE = 'trace.txt'

SCRATCH_ENV = 'PHASE_TUNER_SCRATCH'

# hardcoded list of engines
engines_available = ["anneal", "ga", "exhaustive"]

ENGINE_NAMES = {'anneal': 'Simulated Annealing',
                'ga': 'Genetic Recommender',
                'exhaustive': 'Iterative Compilation'}


class Timer(object):
    def __init__(self):
        self._starts = {}
        self._history = []
        self._lock = threading.Lock()
        self.start()

    def start(self, label=None):
        with self._lock:
            self._last_activity = self._starts[label] = time.time()

    def finish(self, label=None):
        with self._lock:
            try:
                elapsed = time.time() - self._starts[label]
            except KeyError:
                elapsed = time.time() - self._last_activity
            self._last_activity = time.time()
            self._history.append((label, elapsed))
        return elapsed

    def format_time(self, label, elapsed):
        return '{} -- {:.1f} seconds'.format(label, elapsed)

    def print_all(self):
        return [self.format_time(label, elapsed)
                for label, elapsed in self._history]


def boundary(name, text_type):
    """
    Return text that bound parts of the logs.

    type can be 'partition', 'partition_end' and 'run'
    """
    if text_type == 'partition':
        letter = '='
        length = 10
    elif text_type == 'partition_end':
        name = 'end ' + name
        letter = '='
        length = 10
    elif text_type == 'run':
        letter = '+'
        length = 30
    return ' '.join((letter * length, str(name), letter * length))


class SpawnCounter(object):
    """
    Thread-safe count of optimizer processes started.
    """
    def __init__(self):
        self.value = 0
        self._lock = threading.Lock()

    def increment(self):
        with self._lock:
            self.value += 1


@dataclass
class Partition:
    id: str
    input_path: str
    work_dir: str
    baseline: Baseline = None


@dataclass(frozen=True)
class ApplyConfig:
    """
    How a recipe is applied: ``optimizer_cmd`` is a command template with
    the placeholders ``{input}``, ``{output}`` and ``{pipeline}``.

    ``baseline_pipeline`` produces the reference artifact; ``None`` means
    the expansion of the canonical recipe and ``''`` the unchanged input.
    """
    optimizer_cmd: object
    timeout: float = 60
    baseline_pipeline: str = None

    def __post_init__(self):
        check_template(self.optimizer_cmd, ('input', 'output', 'pipeline'), 'optimizer')

    @property
    def argv(self):
        return split_template(self.optimizer_cmd)


@dataclass(frozen=True)
class ApplyResult:
    output: str
    fingerprint: str


@dataclass(frozen=True)
class CacheEntry:
    outcome: ScoreOutcome
    fingerprint: str = None
    output: str = None


class EvalCache(object):
    """
    Outcomes of the recipes evaluated on one partition.

    Entries are written once.  ``applied`` memoises optimizer outputs that
    were produced before their recipe was scored (the canonical recipe
    doubles as the default baseline).
    """
    def __init__(self, partition_id):
        self.partition_id = partition_id
        self.entries = {}
        self.applied = {}

    def __len__(self):
        return len(self.entries)

    def __contains__(self, r):
        return r.genes in self.entries

    def get(self, r):
        return self.entries.get(r.genes)

    def store(self, r, outcome, fingerprint=None, output=None):
        if r.genes in self.entries:
            msg = "recipe {!r} of partition {} is already cached"
            raise KeyError(msg.format(r.genes, self.partition_id))
        entry = CacheEntry(outcome, fingerprint, output)
        self.entries[r.genes] = entry
        return entry

    def fingerprint(self, r):
        entry = self.entries.get(r.genes)
        return None if entry is None else entry.fingerprint

    def failures(self):
        return sum(1 for entry in self.entries.values() if not entry.outcome.ok)


@dataclass
class PartitionResult:
    partition_id: str
    best: Recipe = None
    best_score: float = None
    iterations: int = 0
    failures: int = 0
    terminal_reason: str = None
    trace: SearchTrace = field(default=None, repr=False)
    output: str = None
    explored: int = 0
    error: str = None

    @property
    def failed(self):
        return self.error is not None

    def as_json(self):
        d = {'id': self.partition_id,
             'best_recipe': None if self.best is None else self.best.genes,
             'best_score': self.best_score,
             'iterations': self.iterations,
             'failures': self.failures,
             'terminal_reason': self.terminal_reason}
        if self.failed:
            d['error'] = self.error
        return d


def partition_inputs(paths, scratch_root):
    """
    Return one ``Partition`` per input IR file.

    Ids are the file stems; a repeated stem gets the suffix ``-1``,
    ``-2``, ...  Work directories are created under ``scratch_root``.

    EXAMPLES::

        >>> [p.id for p in partition_inputs(['x/a.ll', 'y/a.ll'], '/tmp/t')]
        ['a', 'a-1']
    """
    if not paths:
        raise ConfigException("no input IR files given")
    partitions = []
    taken = set()
    for path in paths:
        try:
            with open(path, 'rb'):
                pass
        except OSError as msg:
            raise ConfigException("cannot read input {}: {}".format(path, msg))
        stem = os.path.splitext(os.path.basename(path))[0] or 'module'
        ident, k = stem, 0
        while ident in taken:
            k += 1
            ident = '{}-{}'.format(stem, k)
        taken.add(ident)
        work_dir = os.path.join(scratch_root, ident)
        os.makedirs(work_dir, exist_ok=True)
        partitions.append(Partition(ident, os.path.abspath(path), work_dir))
    return partitions


def output_name(r):
    return 'recipe-{}.ll'.format(r.genes or 'empty')


def run_pipeline(p, pipeline, output, cfg, counter=None):
    """
    Run the optimizer on the partition input with the given pipeline.

    OUTPUT:

    an ``ApplyResult``, or a failed ``ScoreOutcome`` when the optimizer
    exits abnormally, times out or leaves no output file
    """
    if not pipeline:
        shutil.copyfile(p.input_path, output)
        return ApplyResult(output, file_fingerprint(output))

    if os.path.exists(output):
        os.remove(output)
    argv = fill_template(cfg.argv, input=p.input_path, output=output,
                         pipeline=pipeline)
    if counter is not None:
        counter.increment()
    try:
        res = subprocess.run(argv, stdin=subprocess.DEVNULL,
                             stdout=subprocess.DEVNULL, stderr=subprocess.PIPE,
                             timeout=cfg.timeout)
        stderr, reason = res.stderr, None
        if res.returncode < 0:
            reason = "optimizer killed by signal {}".format(-res.returncode)
        elif res.returncode > 0:
            reason = "optimizer exited with status {}".format(res.returncode)
        elif not os.path.isfile(output):
            reason = "optimizer produced no output"
    except subprocess.TimeoutExpired as exc:
        stderr, reason = exc.stderr, "timeout"
    except OSError as msg:
        raise InfrastructureError("cannot run {}: {}".format(argv[0], msg))

    if stderr:
        with codecs.open(os.path.join(p.work_dir, LOG_OPTIMIZER), 'a',
                         encoding='utf-8') as log:
            log.write(u"[{}] {}\n".format(now_str(), os.path.basename(output)))
            log.write(stderr.decode('utf-8', 'replace'))
            log.write(u"\n")
    if reason is not None:
        if stderr:
            reason = "{}: {}".format(reason, excerpt(stderr))
        return ScoreOutcome.failed(reason)
    return ApplyResult(output, file_fingerprint(output))


def apply_recipe(p, r, lib, cfg, counter=None):
    """
    Apply recipe ``r`` to partition ``p``.

    The output is ``recipe-<genes>.ll`` in the work directory.  The empty
    recipe copies the input without starting the optimizer.
    """
    output = os.path.join(p.work_dir, output_name(r))
    return run_pipeline(p, expand_recipe(r, lib), output, cfg, counter)


def evaluate(p, r, lib, apply_cfg, cost, cache, history, schema=None,
             counter=None, feature_dump=False):
    """
    Return the ``ScoreOutcome`` of recipe ``r`` on partition ``p``.

    A cached recipe is answered from the cache.  Otherwise the recipe is
    applied; on success the features of the output are pushed to
    ``history`` when the cost model needs them, the output is scored and
    the outcome is cached with the output fingerprint.  A failed
    application is cached too.
    """
    entry = cache.get(r)
    if entry is not None:
        return entry.outcome

    applied = cache.applied.get(r.genes)
    if applied is None:
        applied = apply_recipe(p, r, lib, apply_cfg, counter)
    if isinstance(applied, ScoreOutcome):
        cache.store(r, applied)
        return applied

    if cost.needs_features or feature_dump:
        if schema is None:
            schema = FeatureSchema.load()
        try:
            with open(applied.output, encoding='utf-8', errors='replace') as f:
                model = parse_ir(f.read(), os.path.basename(p.input_path))
        except IrParseError as msg:
            outcome = ScoreOutcome.failed("cannot parse optimizer output: {}".format(msg))
            cache.store(r, outcome, applied.fingerprint, applied.output)
            return outcome
        rows = collect_features(model, schema, callsites=True)
        if feature_dump:
            dump = os.path.join(p.work_dir, '{}.pfs.csv'.format(r.genes or 'empty'))
            with codecs.open(dump, 'w', encoding='utf-8') as f:
                f.write(dump_features_csv(rows, schema))
        if cost.needs_features:
            history.push(feature_vector(rows, schema))

    outcome = cost.score(applied.output, p.baseline, history)
    cache.store(r, outcome, applied.fingerprint, applied.output)
    return outcome


def _truncate(value, digits=3):
    scale = 10 ** digits
    return math.floor(value * scale + 1e-6) / scale


def _fmt_recipe(r):
    if r is None:
        return '-'
    return r.genes or '(empty)'


def _fmt_cost(value):
    if value is None or value == -math.inf:
        return '-'
    if math.isnan(value):
        return 'failed'
    return '{:.2f}'.format(value)


def _table_line(cells, temperature):
    widths = (11, 20, 15, 14, 17, 16, 14)
    text = ''.join('{:<{}}'.format(c, w) for c, w in zip(cells, widths))
    return text + '{:>11}'.format(temperature)


def render_trace(t, partition_id, explored=None, pipeline=None):
    """
    Return the trace as a text table, framed by banners.

    Costs are printed with two decimals and temperatures truncated to
    three.  An empty trace renders the banners and the header only.

    INPUT:

    - ``t`` -- a ``SearchTrace``

    - ``explored`` -- (optional) the number of recipes evaluated; by
      default the number of distinct proposals in the trace

    - ``pipeline`` -- (optional) the expansion of the final recipe
    """
    engine = ENGINE_NAMES.get(t.engine, t.engine)
    dashes = '-' * 50
    lines = ['phase-tuner :: Beginning {}...'.format(engine),
             dashes,
             'phase-tuner :: Optimizing module "{}"'.format(partition_id),
             dashes,
             _table_line(('Iteration', 'Current State', 'Next State', 'Best State',
                          'Current Cost', 'Next Cost', 'Best Cost'), 'Temperature')]
    for row in t.rows:
        cells = (str(row.iteration), _fmt_recipe(row.current), _fmt_recipe(row.next),
                 _fmt_recipe(row.best), _fmt_cost(row.current_cost),
                 _fmt_cost(row.next_cost), _fmt_cost(row.best_cost))
        lines.append(_table_line(cells, '{:.3f}'.format(_truncate(row.temperature))))
    if t.rows:
        if explored is None:
            explored = len(set(row.next.genes for row in t.rows))
        best = t.best if t.best is not None else t.rows[-1].best
        lines.append('')
        lines.append('Explored Recipes Size: {}'.format(explored))
        lines.append('phase-tuner :: {} finished running for module "{}"'.format(
            engine, partition_id))
        if best is None:
            lines.append('No recipe was accepted')
        else:
            lines.append('The final recipe accepted is "{}":'.format(best.genes))
            if pipeline is not None:
                lines.append(pipeline)
    return '\n'.join(lines) + '\n'


def summary_table(results):
    """
    Return the per-partition summary as text.
    """
    header = '{:<20}{:<14}{:>12}{:>12}{:>10}  {}'.format(
        'Partition', 'Best Recipe', 'Best Score', 'Iterations', 'Failures', 'Status')
    lines = [header, '-' * len(header)]
    for res in results:
        score = '-' if res.best_score is None else '{:.4f}'.format(res.best_score)
        status = 'Failed: {}'.format(res.error) if res.failed else res.terminal_reason
        lines.append('{:<20}{:<14}{:>12}{:>12}{:>10}  {}'.format(
            res.partition_id, _fmt_recipe(res.best), score, res.iterations,
            res.failures, status))
    return '\n'.join(lines)


class OptionDict(object):
    r"""
    Fake option class built from a dictionary.

    This is used to run the tuner in a Python console or in tests.  Every
    option is ``None`` unless given, so the configuration defaults apply.

    EXAMPLES::

        >>> OptionDict({'max_iterations': 20}).max_iterations
        20
        >>> OptionDict({}).engine is None
        True
    """
    config = None

    def __init__(self, d):
        for key, value in d.items():
            setattr(self, key, value)

    def __getattr__(self, name):
        if name.startswith('__'):
            raise AttributeError(name)
        return None


class Tuner(object):
    """
    Main class of the phase tuner.

    INPUT:

    - options -- an option class or a dictionary

    EXAMPLES::

        >>> from phase_tuner.tuner import Tuner
        >>> T = Tuner({'optimizer_cmd': 'opt -passes={pipeline} {input} -o {output}',
        ...            'cost_type': 'instcount'})
        >>> results, summary = T.run_driver(['a.ll', 'b.ll'])
    """
    # hardcoded default config
    default_config = {"cooling": "geometric",
                      "max_iterations": 100,
                      "rng_val": 123,
                      "max_temperature": 100.0,
                      "t_floor": 1.0,
                      "initial_sample_size": 20,
                      "stall_limit": 10,
                      "mutation_rate": 0.05,
                      "crossover_rate": 0.95,
                      "population_size": 10,
                      "crossover_type": "single-point",
                      "mutation_type": "flip-one",
                      "generations": 10,
                      "elitism": 1,
                      "tournament_size": 2,
                      "cost_type": "ir-analysis",
                      "use_protean_collect": False,
                      "engine": "anneal",
                      "max_recipe_length": 5,
                      "enumeration_cap": ENUMERATION_CAP,
                      "library": "default",
                      "schema": None,
                      "optimizer_cmd": None,
                      "timeout": 60,
                      "baseline_pipeline": None,
                      "scorer_cmd": None,
                      "scorer_timeout": 60,
                      "model": None,
                      "mca_cmd": None,
                      "mca_pattern": MCA_PATTERN,
                      "workers": multiprocessing.cpu_count(),
                      "finalize_cmd": None,
                      "output_table": False,
                      "json_out": None,
                      "feature_dump": False,
                      "module_level_ipc": False,
                      "scratch_dir": os.path.join(tempfile.gettempdir(), 'phase-tuner')}

    def __init__(self, options=None):
        if options is None:
            options = {}
        if isinstance(options, dict):
            # when this is run in a Python session
            options = OptionDict(options)

        self.options = options
        self._log_lock = threading.RLock()
        self.spawns = SpawnCounter()
        self.timer = Timer()
        self.__version__ = phase_tuner.__version__
        self.reload_config()

        self.write_log('phase-tuner {} initialized in {} (pid: {})'.format(
            self.__version__, self.log_dir, os.getpid()), LOG_MAIN)

    def write_log(self, msg, logfile=None, date=True):
        r"""
        Write ``msg`` in a logfile.

        INPUT:

        - ``logfile`` -- (optional)

           * if not provided, write on stdout

           * if it is a string then append ``msg`` to the file ``logfile``
             in the log directory

           * if it is a tuple or a list, then call write_log for each member of
             that list

        - ``date`` -- (default ``True``) whether to write the date at the
          beginning of the line
        """
        with self._log_lock:
            if logfile is None:
                logfile = sys.stdout
                close = False
            elif isinstance(logfile, str):
                filename = os.path.join(self.log_dir, logfile)
                logfile = codecs.open(filename, 'a', encoding='utf-8')
                close = True
            elif isinstance(logfile, (tuple, list)):
                for f in logfile:
                    self.write_log(msg, f, date)
                return
            else:  # logfile is a file
                close = False

            try:
                if date:
                    logfile.write(u"[{}] ".format(now_str()))
                logfile.write(msg)
                logfile.write(u"\n")
            except AttributeError:
                raise ValueError("logfile = {} must be either None, or a string or a list or a file".format(logfile))

            if close:
                logfile.close()
            else:
                logfile.flush()

    def delete_log(self, logfile):
        filename = os.path.join(self.log_dir, logfile)
        if os.path.isfile(filename):
            os.remove(filename)

    def get_local_config(self):
        """
        Return the configuration obtained from the command line options and
        the local configuration file.

        This is done in the following order:

        1) pick default values for all parameters

        2) override with values from the config file if given

        3) override the scratch directory from the environment

        4) override from the options class given in argument
        """
        from .cli import load_config_file

        # start from a fresh copy of the default configuration
        conf = self.default_config.copy()

        if self.options.config is not None:
            conf.update(load_config_file(self.options.config))

        if os.environ.get(SCRATCH_ENV):
            conf['scratch_dir'] = os.environ[SCRATCH_ENV]

        for opt in self.default_config:
            value = getattr(self.options, opt, None)
            if value is not None:
                conf[opt] = value
        return conf

    def reload_config(self):
        """
        Reload and validate the configuration.

        This sets the attribute ``config`` (the configuration dictionary)
        and builds the library, the search space, the cost model and the
        engine settings.  Any problem raises ``ConfigException`` before a
        single partition is tuned.
        """
        self.config = conf = self.get_local_config()

        self.log_dir = os.path.abspath(conf['scratch_dir'])
        os.makedirs(self.log_dir, exist_ok=True)

        try:
            self.library = SubsequenceLibrary.load(conf['library'])
            self.space = SpaceConfig.from_library(self.library, int(conf['max_recipe_length']))
        except RecipeError as msg:
            raise ConfigException(str(msg))

        try:
            self.schema = FeatureSchema.load(conf['schema'])
        except (OSError, ValueError) as msg:
            raise ConfigException("cannot load feature schema: {}".format(msg))

        if conf['engine'] not in engines_available:
            raise ConfigException("unknown engine {!r} (choose from {})".format(
                conf['engine'], ', '.join(engines_available)))
        if int(conf['workers']) < 1:
            raise ConfigException("at least one worker is needed")

        if conf['optimizer_cmd'] is None:
            raise ConfigException("no optimizer command given (--optimizer-cmd)")
        self.apply_config = ApplyConfig(conf['optimizer_cmd'], float(conf['timeout']),
                                        conf['baseline_pipeline'])
        check_executable(self.apply_config.argv, 'optimizer')

        model = None
        if conf['model'] is not None:
            model = LinearModel.load(conf['model'], len(self.schema))
        for key in ('scorer_cmd', 'mca_cmd'):
            if conf[key] is not None:
                check_executable(split_template(conf[key]), key.split('_')[0])
        if conf['finalize_cmd'] is not None:
            check_executable(split_template(conf['finalize_cmd']), 'finalize')
        self.cost_model = CostModel(conf['cost_type'], scorer_cmd=conf['scorer_cmd'],
                                    model=model, mca_cmd=conf['mca_cmd'],
                                    timeout=float(conf['scorer_timeout']),
                                    pattern=conf['mca_pattern'],
                                    use_features=bool(conf['use_protean_collect']))

        try:
            cooling = CoolingSchedule(conf['cooling'], float(conf['max_temperature']),
                                      float(conf['t_floor']), int(conf['max_iterations']))
            self.annealer_config = AnnealerConfig(cooling, int(conf['max_iterations']),
                                                  int(conf['initial_sample_size']),
                                                  int(conf['rng_val']),
                                                  int(conf['stall_limit']))
            self.ga_config = GaConfig(int(conf['population_size']),
                                      float(conf['mutation_rate']),
                                      float(conf['crossover_rate']),
                                      conf['crossover_type'], conf['mutation_type'],
                                      int(conf['generations']), int(conf['elitism']),
                                      int(conf['tournament_size']), int(conf['rng_val']))
        except ValueError as msg:
            raise ConfigException(str(msg))

        # write the config in logfile
        self.delete_log(LOG_CONFIG)
        self.write_log("Configuration for the tuner\n{}\n".format(now_str()), LOG_CONFIG, False)
        self.write_log(pprint.pformat(self.config), LOG_CONFIG, False)

        return self.config

    def make_partitions(self, paths):
        return partition_inputs(paths, self.log_dir)

    def prepare_baseline(self, p, cache):
        """
        Produce the baseline artifact of ``p`` and record its metrics.

        With the default baseline pipeline the artifact is the output of
        the canonical recipe, which the search then reuses.
        """
        pipeline = self.apply_config.baseline_pipeline
        if pipeline is None:
            canonical = canonical_recipe(self.library, self.space.max_length)
            applied = apply_recipe(p, canonical, self.library, self.apply_config,
                                   self.spawns)
            if not isinstance(applied, ScoreOutcome):
                cache.applied[canonical.genes] = applied
        else:
            applied = run_pipeline(p, pipeline, os.path.join(p.work_dir, 'baseline.ll'),
                                   self.apply_config, self.spawns)
        if isinstance(applied, ScoreOutcome):
            raise InfrastructureError("cannot produce the baseline of {}: {}".format(
                p.id, applied.reason))

        instcount = 0
        try:
            instcount = count_instructions(applied.output)
        except IrParseError as msg:
            if self.cost_model.cost_type == 'instcount':
                raise InfrastructureError("cannot parse the baseline of {}: {}".format(p.id, msg))
        cycles = None
        if self.cost_model.needs_cycles:
            cycles, reason = measure_cycles(self.cost_model.mca_cmd, applied.output,
                                            self.cost_model.timeout,
                                            self.cost_model.pattern)
            if cycles is None:
                raise InfrastructureError("cannot measure the baseline of {}: {}".format(
                    p.id, reason))
        p.baseline = Baseline(instcount, os.path.getsize(applied.output), cycles)
        return p.baseline

    def optimize_partition(self, p, engine=None):
        """
        Search the best recipe of partition ``p`` with ``engine`` (by
        default the configured one) and return its ``PartitionResult``.

        The annealer stops early once ``stall_limit`` consecutive
        proposals produce the same IR as the best recipe.  The best
        recipe's output is copied to ``final.ll`` in the work directory.
        """
        engine = engine or self.config['engine']
        cache = EvalCache(p.id)
        history = HistoryBuffer(self.schema.names, self.schema.schema_id)
        self.prepare_baseline(p, cache)

        def cost(r):
            return evaluate(p, r, self.library, self.apply_config, self.cost_model,
                            cache, history, self.schema, self.spawns,
                            self.config['feature_dump'])

        def stall_test(proposal, outcome, best):
            return (outcome.ok and best is not None and
                    cache.fingerprint(proposal) == cache.fingerprint(best))

        if engine == 'anneal':
            best, best_cost, trace = run_annealing(self.annealer_config, self.space,
                                                   cost, stall_test)
        elif engine == 'ga':
            best, best_cost, trace = run_ga(self.ga_config, self.space, cost)
        else:
            best, best_cost, trace = run_exhaustive(self.space, cost,
                                                    int(self.config['enumeration_cap']))

        result = PartitionResult(p.id, best, None, len(trace.rows), cache.failures(),
                                 trace.terminal_reason, trace, explored=len(cache))
        pipeline = None
        if best is not None:
            result.best_score = best_cost
            result.output = os.path.join(p.work_dir, 'final.ll')
            shutil.copyfile(cache.get(best).output, result.output)
            pipeline = expand_recipe(best, self.library)

        text = render_trace(trace, p.id, len(cache), pipeline)
        with codecs.open(os.path.join(p.work_dir, LOG_TRACE), 'w', encoding='utf-8') as f:
            f.write(text)
        if self.config['output_table']:
            self.write_log(text, date=False)
        return result

    def tune_partition(self, p):
        """
        Run ``optimize_partition``, turning an infrastructure error into a
        failed result.
        """
        self.write_log(boundary(p.id, 'partition'), LOG_MAIN)
        self.timer.start(p.id)
        try:
            result = self.optimize_partition(p)
        except (InfrastructureError, OSError) as msg:
            self.write_log("partition {} failed: {}".format(p.id, msg), LOG_MAIN)
            result = PartitionResult(p.id, error=str(msg))
        self.timer.finish(p.id)
        self.write_log(boundary(p.id, 'partition_end'), LOG_MAIN)
        return result

    def finalize(self, results):
        """
        Run the finalize command once over the output IR of every
        partition.
        """
        outputs = [res.output for res in results if res.output is not None]
        argv = split_template(self.config['finalize_cmd']) + outputs
        self.write_log("finalizing: {}".format(' '.join(argv)), LOG_MAIN)
        try:
            res = subprocess.run(argv, capture_output=True, text=True)
        except OSError as msg:
            raise InfrastructureError("cannot run {}: {}".format(argv[0], msg))
        if res.returncode != 0:
            raise InfrastructureError("finalize command exited with status {}: {}".format(
                res.returncode, excerpt(res.stderr)))

    def run_driver(self, inputs):
        """
        Tune every input and return ``(results, summary)``.

        Partitions are tuned by a pool of ``workers`` threads; results come
        back in input order.
        """
        partitions = self.make_partitions(inputs)
        self.write_log(boundary('{} partitions'.format(len(partitions)), 'run'), LOG_MAIN)
        workers = min(int(self.config['workers']), len(partitions))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(self.tune_partition, partitions))

        summary = summary_table(results)
        self.delete_log(LOG_SUMMARY)
        self.write_log(summary, (LOG_SUMMARY, sys.stdout), False)
        for line in self.timer.print_all():
            self.write_log(line, LOG_MAIN)

        if self.config['json_out'] is not None:
            with codecs.open(self.config['json_out'], 'w', encoding='utf-8') as f:
                for res in results:
                    f.write(json.dumps(res.as_json()))
                    f.write(u"\n")

        if self.config['finalize_cmd'] is not None:
            self.finalize(results)
        return results, summary
