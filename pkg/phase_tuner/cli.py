"""
Command-line entry point of the phase tuner.

Every tuning knob is an option here; options are left at ``None`` unless
given so that they only override the config file when given explicitly.
A single comma-packed ``--protean-args=-name=value,-flag`` argument is
accepted too and expanded into ordinary options.
"""
import json
import os
import sys

from optparse import OptionParser, SUPPRESS_HELP

from .cost_models import cost_types_available
from .search import crossover_types, mutation_types
from .tuner import Tuner, engines_available
from .util import ConfigException, UsageError, InfrastructureError

# options that are switched on or off
BOOLEAN_OPTIONS = ('use_protean_collect', 'output_table', 'feature_dump',
                   'module_level_ipc')

PROBABILITIES = ('mutation_rate', 'crossover_rate')

TRUE_WORDS = ('1', 'true', 'yes', 'on')
FALSE_WORDS = ('0', 'false', 'no', 'off')


class TunerOptionParser(OptionParser):
    """
    An ``OptionParser`` raising ``UsageError`` instead of exiting.
    """
    def error(self, msg):
        raise UsageError(msg)


def _truth(value, name):
    word = value.strip().lower()
    if word in TRUE_WORDS:
        return True
    if word in FALSE_WORDS:
        return False
    raise UsageError("option --{}: expected a boolean, got {!r}".format(name, value))


def expand_protean_args(packed):
    """
    Expand a comma-packed ``-name=value,-flag`` string into options.

    A ``protean-`` prefix is dropped from names that are not options by
    themselves.

    EXAMPLES::

        >>> expand_protean_args('-max-iterations=20,-protean-output-table')
        ['--max-iterations=20', '--output-table']
    """
    tokens = []
    for item in packed.split(','):
        item = item.strip()
        if not item:
            continue
        if not item.startswith('-'):
            raise UsageError("--protean-args: expected -name=value, got {!r}".format(item))
        name, eq, value = item.lstrip('-').partition('=')
        if (name.replace('-', '_') not in Tuner.default_config and
                name.startswith('protean-')):
            name = name[len('protean-'):]
        tokens.append('--' + name + eq + value)
    return tokens


def normalize_args(argv):
    """
    Expand ``--protean-args`` and turn ``--flag=false`` into
    ``--no-flag`` for the boolean options.
    """
    expanded = []
    argv = iter(argv)
    for arg in argv:
        if arg == '--protean-args':
            try:
                arg = '--protean-args=' + next(argv)
            except StopIteration:
                raise UsageError("--protean-args option requires an argument")
        if arg.startswith('--protean-args='):
            expanded.extend(expand_protean_args(arg.split('=', 1)[1]))
        else:
            expanded.append(arg)

    normalized = []
    for arg in expanded:
        name, eq, value = arg.partition('=')
        key = name[2:].replace('-', '_')
        if arg.startswith('--') and eq and key in BOOLEAN_OPTIONS:
            normalized.append(name if _truth(value, name[2:]) else '--no-' + name[2:])
        else:
            normalized.append(arg)
    return normalized


def _help(text, key):
    return "{} [default: {}]".format(text, Tuner.default_config[key])


def build_parser():
    parser = TunerOptionParser(usage="%prog [options] FILE.ll [FILE.ll ...]")

    # Don't provide defaults for these options so that we can tell whether
    # or not they were given explicitly (i.e. their value is not None) and
    # should override settings from the config file.
    parser.add_option("--config", dest="config",
                      help="read settings from a key = value (or .json) file")
    parser.add_option("--protean-args", dest="protean_args", metavar="LIST",
                      help="comma-packed options, e.g. "
                           "-max-iterations=20,-protean-output-table")

    # simulated annealing
    parser.add_option("--cooling", type="choice", choices=["geometric", "linear"],
                      help=_help("cooling schedule", "cooling"))
    parser.add_option("--max-iterations", type="int", metavar="N",
                      help=_help("maximum iterations of simulated annealing",
                                 "max_iterations"))
    parser.add_option("--rng-val", type="int", metavar="SEED",
                      help=_help("seed of the random generator", "rng_val"))
    parser.add_option("--max-temperature", type="float", metavar="T",
                      help=_help("initial temperature", "max_temperature"))
    parser.add_option("--t-floor", type="float", metavar="T",
                      help=_help("final temperature", "t_floor"))
    parser.add_option("--initial-sample-size", type="int", metavar="N",
                      help=_help("random recipes evaluated before the search",
                                 "initial_sample_size"))
    parser.add_option("--stall-limit", type="int", metavar="N",
                      help=_help("stop after N proposals leaving the IR unchanged "
                                 "(0 disables)", "stall_limit"))

    # genetic recommender
    parser.add_option("--mutation-rate", type="float", metavar="P",
                      help=_help("mutation rate of the genetic recommender",
                                 "mutation_rate"))
    parser.add_option("--crossover-rate", type="float", metavar="P",
                      help=_help("crossover rate of the genetic recommender",
                                 "crossover_rate"))
    parser.add_option("--population-size", type="int", metavar="N",
                      help=_help("population size of the genetic recommender",
                                 "population_size"))
    parser.add_option("--crossover-type", type="choice", choices=crossover_types,
                      help=_help("crossover method", "crossover_type"))
    parser.add_option("--mutation-type", type="choice", choices=mutation_types,
                      help=_help("mutation method", "mutation_type"))
    parser.add_option("--generations", type="int", metavar="N",
                      help=_help("generations of the genetic recommender", "generations"))
    parser.add_option("--elitism", type="int", metavar="N",
                      help=_help("fittest recipes kept unchanged per generation",
                                 "elitism"))
    parser.add_option("--tournament-size", type="int", metavar="N",
                      help=_help("tournament size of parent selection",
                                 "tournament_size"))

    # search space and engine
    parser.add_option("--engine", type="choice", choices=engines_available,
                      help=_help("search engine", "engine"))
    parser.add_option("--max-recipe-length", type="int", metavar="N",
                      help=_help("maximum number of subsequences per recipe",
                                 "max_recipe_length"))
    parser.add_option("--enumeration-cap", type="int", metavar="N",
                      help=_help("largest space the exhaustive engine enumerates",
                                 "enumeration_cap"))
    parser.add_option("--library", metavar="FILE",
                      help=_help("subsequence library file, or a shipped library "
                                 "name", "library"))

    # cost models
    parser.add_option("--cost-type", type="choice", choices=cost_types_available,
                      help=_help("cost model", "cost_type"))
    parser.add_option("--use-protean-collect", action="store_true",
                      help=_help("feed collected IR features to the scorer",
                                 "use_protean_collect"))
    parser.add_option("--no-use-protean-collect", action="store_false",
                      dest="use_protean_collect", help=SUPPRESS_HELP)
    parser.add_option("--scorer-cmd", metavar="CMD",
                      help="external scorer command (ir-analysis)")
    parser.add_option("--scorer-timeout", type="float", metavar="SECONDS",
                      help=_help("scorer timeout", "scorer_timeout"))
    parser.add_option("--model", metavar="FILE",
                      help="linear model weights (ir-analysis)")
    parser.add_option("--schema", metavar="FILE",
                      help="feature schema file [default: the shipped schema]")
    parser.add_option("--mca-cmd", metavar="CMD",
                      help="cycle-count command (mca)")
    parser.add_option("--mca-pattern", metavar="TEXT",
                      help=_help("line prefix of the cycle count", "mca_pattern"))

    # optimizer
    parser.add_option("--optimizer-cmd", metavar="CMD",
                      help="optimizer command with {input}, {output} and {pipeline}")
    parser.add_option("--timeout", type="float", metavar="SECONDS",
                      help=_help("optimizer timeout", "timeout"))
    parser.add_option("--baseline-pipeline", metavar="PIPELINE",
                      help="pipeline of the baseline artifact "
                           "[default: the canonical recipe]")

    # driver
    parser.add_option("--workers", type="int", metavar="N",
                      help=_help("partitions tuned in parallel", "workers"))
    parser.add_option("--finalize-cmd", metavar="CMD",
                      help="command run once over all output IR files")
    parser.add_option("--output-table", action="store_true",
                      help=_help("print the search trace of every partition",
                                 "output_table"))
    parser.add_option("--no-output-table", action="store_false",
                      dest="output_table", help=SUPPRESS_HELP)
    parser.add_option("--json-out", metavar="FILE",
                      help="write a JSON-lines summary to FILE")
    parser.add_option("--feature-dump", action="store_true",
                      help=_help("write the feature CSV of every candidate",
                                 "feature_dump"))
    parser.add_option("--no-feature-dump", action="store_false",
                      dest="feature_dump", help=SUPPRESS_HELP)
    parser.add_option("--module-level-ipc", action="store_true",
                      help=_help("not supported, temporary files are used",
                                 "module_level_ipc"))
    parser.add_option("--no-module-level-ipc", action="store_false",
                      dest="module_level_ipc", help=SUPPRESS_HELP)
    parser.add_option("--scratch-dir", metavar="DIR",
                      help="directory of work files and logs [default: ${} or "
                           "{}]".format('PHASE_TUNER_SCRATCH',
                                        Tuner.default_config['scratch_dir']))
    return parser


def parse_args(argv=None):
    """
    Parse the command line.

    OUTPUT:

    a pair ``(options, inputs)``; ``options`` holds ``None`` for every
    option that was not given
    """
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    (options, inputs) = parser.parse_args(normalize_args(argv))

    for key in PROBABILITIES:
        value = getattr(options, key)
        if value is not None and not 0 <= value <= 1:
            msg = "option --{}: {} is not a probability in [0, 1]"
            raise UsageError(msg.format(key.replace('_', '-'), value))
    for key in ('max_iterations', 'initial_sample_size', 'stall_limit',
                'population_size', 'generations', 'elitism', 'tournament_size',
                'max_recipe_length', 'enumeration_cap', 'workers'):
        value = getattr(options, key)
        if value is not None and value < 0:
            msg = "option --{}: must be non-negative, got {}"
            raise UsageError(msg.format(key.replace('_', '-'), value))

    # the configuration file might be a relative path...
    if options.config is not None:
        options.config = os.path.abspath(options.config)
    return options, inputs


def _convert(key, value, where):
    default = Tuner.default_config[key]
    try:
        if isinstance(default, bool):
            return _truth(value, key)
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (ValueError, UsageError):
        raise ConfigException("{}: invalid value {!r} for {}".format(where, value, key))
    return value


def load_config_file(path):
    """
    Return the settings of a config file as a dictionary.

    A ``.json`` file holds one object.  Any other file holds
    ``key = value`` lines; blank lines and ``#`` comments are ignored.
    Keys are option names, with ``-`` or ``_``.  Unknown and repeated keys
    are errors.
    """
    try:
        with open(path, encoding='utf-8') as f:
            text = f.read()
    except OSError as msg:
        raise ConfigException("cannot read config file {}: {}".format(path, msg))

    conf = {}
    if path.endswith('.json'):
        try:
            data = json.loads(text or '{}')
        except ValueError as msg:
            raise ConfigException("{}: {}".format(path, msg))
        if not isinstance(data, dict):
            raise ConfigException("{}: expected a JSON object".format(path))
        for key, value in data.items():
            key = str(key).replace('-', '_')
            if key not in Tuner.default_config:
                raise ConfigException("{}: unknown setting {!r}".format(path, key))
            conf[key] = value
        return conf

    for lineno, line in enumerate(text.splitlines(), 1):
        where = "{}:{}".format(path, lineno)
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        key, eq, value = line.partition('=')
        if not eq:
            raise ConfigException("{}: expected key = value".format(where))
        key = key.strip().replace('-', '_')
        if key not in Tuner.default_config:
            raise ConfigException("{}: unknown setting {!r}".format(where, key))
        if key in conf:
            raise ConfigException("{}: duplicate setting {!r}".format(where, key))
        conf[key] = _convert(key, value.strip(), where)
    return conf


def main(args=None):
    """
    Run the tuner; return the exit code.

    0 on success, 1 if a partition failed, 2 on a usage or configuration
    error.
    """
    try:
        options, inputs = parse_args(args)
        if options.module_level_ipc:
            print("--module-level-ipc is not supported, using temp files")
        if not inputs:
            raise UsageError("no input IR files given")
        tuner = Tuner(options)
        results, summary = tuner.run_driver(inputs)
    except ConfigException as msg:
        print("Error: {}".format(msg), file=sys.stderr)
        return 2
    except InfrastructureError as msg:
        print("Error: {}".format(msg), file=sys.stderr)
        return 1
    return 1 if any(res.failed for res in results) else 0


if __name__ == '__main__':
    sys.exit(main(sys.argv[1:]))
