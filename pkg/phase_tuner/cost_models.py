"""
A cost model scores one transformed IR file against its partition baseline.

Scores are speedup-like: higher is better and ``1.0`` means parity with
the baseline.  A model returns a ``ScoreOutcome``: either a success
carrying the score, or a failure carrying the reason the recipe is
rejected.  Failures never abort a search; environment problems (a scorer
that cannot be spawned at all) raise ``InfrastructureError`` instead.

The cost types are:

- ``ir-analysis`` -- an external scorer reading features on stdin, or an
  in-process linear surrogate over the same features
- ``mca`` -- cycle counts reported by an external command
- ``instcount`` -- static instruction count
- ``filesize`` -- size of the IR file in bytes
"""
import math
import os
import subprocess

from collections import deque
from dataclasses import dataclass

import numpy as np

from .ir_model import parse_ir, IrParseError
from .util import (split_template, fill_template, excerpt,
                   ConfigException, InfrastructureError)

# hardcoded list of cost types
cost_types_available = ["ir-analysis", "mca", "instcount", "filesize"]

HISTORY_WINDOW = 5
SCORE_FLOOR = 1e-6
MCA_PATTERN = 'Total Cycles:'


class ScoreOutcome(object):
    """
    Container class for the result of scoring one candidate.
    """
    Success = "Success"
    Failed = "Failed"

    __slots__ = ('status', 'score', 'reason')

    def __init__(self, status, score=None, reason=None):
        assert status in (self.Success, self.Failed)
        if status == self.Success:
            score = float(score)
            if not math.isfinite(score) or score <= 0:
                raise ValueError("a successful score must be finite and "
                                 "positive, got {!r}".format(score))
        elif not reason:
            raise ValueError("a failed outcome needs a reason")
        self.status = status
        self.score = score
        self.reason = reason

    @classmethod
    def success(cls, score):
        return cls(cls.Success, score=score)

    @classmethod
    def failed(cls, reason):
        return cls(cls.Failed, reason=reason)

    @property
    def ok(self):
        return self.status == self.Success

    def __eq__(self, other):
        return (isinstance(other, ScoreOutcome) and
                (self.status, self.score, self.reason) ==
                (other.status, other.score, other.reason))

    def __hash__(self):
        return hash((self.status, self.score, self.reason))

    def __repr__(self):
        if self.ok:
            return "Success({!r})".format(self.score)
        return "Failed({!r})".format(self.reason)


@dataclass(frozen=True)
class Baseline:
    """
    Reference metrics of a partition, measured on its baseline artifact.
    """
    instcount: int
    bytes: int
    cycles: int = None


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray
    schema_id: str = 'pfs'

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("a feature vector is one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature vector has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        return (isinstance(other, FeatureVector) and
                self.schema_id == other.schema_id and
                np.array_equal(self.values, other.values))


class HistoryBuffer(object):
    """
    The feature vectors of the last few evaluated states, oldest first.

    INPUT:

    - ``columns`` -- the column names of the feature schema

    - ``schema_id`` -- the schema label every pushed vector must carry

    EXAMPLES::

        >>> h = HistoryBuffer(['a', 'b'])
        >>> _ = h.push(FeatureVector([0, 2])).push(FeatureVector([2, 0]))
        >>> aggregate_history(h).values
        array([1., 1.])
    """
    def __init__(self, columns, schema_id='pfs', window=HISTORY_WINDOW):
        self.columns = tuple(columns)
        self.schema_id = schema_id
        self.window = deque(maxlen=window)

    def push(self, fv):
        if fv.schema_id != self.schema_id or len(fv) != len(self.columns):
            msg = "feature vector ({}, {} values) does not match schema ({}, {} columns)"
            raise ValueError(msg.format(fv.schema_id, len(fv), self.schema_id,
                                        len(self.columns)))
        self.window.append(fv)
        return self

    def __len__(self):
        return len(self.window)

    def __iter__(self):
        return iter(self.window)


def push_history(h, fv):
    return h.push(fv)


def aggregate_history(h):
    """
    Return the element-wise mean of the history window.
    """
    if not len(h):
        raise ValueError("cannot aggregate an empty history")
    values = np.mean([fv.values for fv in h], axis=0)
    return FeatureVector(values, h.schema_id)


def _csv_lines(header, values):
    return "{}\n{}\n".format(','.join(header), ','.join(values))


def history_csv(h):
    """
    Return the two-line CSV (header, values) of the aggregated history.
    """
    fv = aggregate_history(h)
    return _csv_lines(h.columns, [repr(float(v)) for v in fv.values])


def _parse_score(text):
    try:
        value = float(text.strip())
    except ValueError:
        return None
    if not math.isfinite(value) or value <= 0:
        return None
    return value


def score_external(scorer_cmd, h, timeout=60, ir_path=None):
    """
    Score with an external scorer process.

    The scorer reads two CSV lines on stdin (header, values) and prints a
    single positive number.  With ``h=None`` the CSV has the single column
    ``ir-path`` holding ``ir_path``.  ``{ir}`` in the command is replaced
    by ``ir_path``.
    """
    argv = fill_template(split_template(scorer_cmd), ir=ir_path or '')
    if h is None:
        data = _csv_lines(['ir-path'], [ir_path or ''])
    else:
        data = history_csv(h)
    try:
        res = subprocess.run(argv, input=data, capture_output=True,
                             text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        return ScoreOutcome.failed("timeout")
    except OSError as msg:
        raise InfrastructureError("cannot run scorer {}: {}".format(argv[0], msg))
    if res.returncode != 0:
        msg = "scorer exited with status {}: {}"
        return ScoreOutcome.failed(msg.format(res.returncode, excerpt(res.stderr)))
    value = _parse_score(res.stdout)
    if value is None:
        return ScoreOutcome.failed("unparseable")
    return ScoreOutcome.success(value)


def count_instructions(path):
    """
    Return the number of instructions of the IR file at ``path``.
    """
    with open(path, encoding='utf-8', errors='replace') as f:
        model = parse_ir(f.read())
    return model.instruction_count


def score_instcount(ir, baseline_instcount):
    try:
        count = count_instructions(ir)
    except (OSError, IrParseError) as msg:
        return ScoreOutcome.failed("cannot count instructions: {}".format(msg))
    if count == 0:
        return ScoreOutcome.failed("candidate has no instructions")
    return ScoreOutcome.success(baseline_instcount / count)


def score_filesize(ir, baseline_bytes):
    try:
        size = os.path.getsize(ir)
    except OSError as msg:
        return ScoreOutcome.failed("cannot read candidate: {}".format(msg))
    if size == 0:
        return ScoreOutcome.failed("candidate is empty")
    return ScoreOutcome.success(baseline_bytes / size)


def measure_cycles(mca_cmd, ir, timeout=60, pattern=MCA_PATTERN):
    """
    Run the cycle-count command on ``ir``.

    OUTPUT:

    a pair ``(cycles, reason)``; ``cycles`` is ``None`` on failure
    """
    argv = split_template(mca_cmd)
    if any('{input}' in arg for arg in argv):
        argv = fill_template(argv, input=ir)
    else:
        argv.append(ir)
    try:
        res = subprocess.run(argv, capture_output=True, text=True,
                             timeout=timeout)
    except subprocess.TimeoutExpired:
        return None, "timeout"
    except OSError as msg:
        raise InfrastructureError("cannot run {}: {}".format(argv[0], msg))
    if res.returncode != 0:
        msg = "cycle counter exited with status {}: {}"
        return None, msg.format(res.returncode, excerpt(res.stderr))
    for line in res.stdout.splitlines():
        line = line.strip()
        if line.startswith(pattern):
            try:
                return int(line[len(pattern):].strip()), None
            except ValueError:
                break
    return None, "pattern {!r} not found".format(pattern)


def score_mca(mca_cmd, ir, baseline_cycles, timeout=60, pattern=MCA_PATTERN):
    cycles, reason = measure_cycles(mca_cmd, ir, timeout, pattern)
    if cycles is None:
        return ScoreOutcome.failed(reason)
    if cycles <= 0:
        return ScoreOutcome.failed("non-positive cycle count {}".format(cycles))
    return ScoreOutcome.success(baseline_cycles / cycles)


class LinearModel(object):
    """
    A linear surrogate scorer: ``bias + weights . features``.

    The weight file holds one number per line, the bias first.
    """
    def __init__(self, bias, weights, floor=SCORE_FLOOR):
        self.bias = float(bias)
        self.weights = np.asarray(weights, dtype=float)
        self.floor = floor

    @classmethod
    def load(cls, path, dimension=None, floor=SCORE_FLOOR):
        numbers = []
        try:
            with open(path, encoding='utf-8') as f:
                for lineno, line in enumerate(f, 1):
                    if not line.strip():
                        continue
                    try:
                        numbers.append(float(line))
                    except ValueError:
                        msg = "{}:{}: not a number: {!r}"
                        raise ConfigException(msg.format(path, lineno, line.strip()))
        except OSError as msg:
            raise ConfigException("cannot read model {}: {}".format(path, msg))
        if not numbers:
            raise ConfigException("model {} is empty".format(path))
        model = cls(numbers[0], numbers[1:], floor)
        if dimension is not None:
            model.check_dimension(dimension)
        return model

    def check_dimension(self, dimension):
        if len(self.weights) != dimension:
            msg = "model has {} weights but the feature schema has {} columns"
            raise ConfigException(msg.format(len(self.weights), dimension))

    def predict(self, fv):
        self.check_dimension(len(fv))
        return self.bias + float(np.dot(self.weights, fv.values))


def score_linear_model(model, h):
    fv = aggregate_history(h)
    return ScoreOutcome.success(max(model.floor, model.predict(fv)))


class CostModel(object):
    """
    The cost type of a run, bound to its settings.

    Instances are immutable once built; ``score`` may be called from
    several threads on different partitions.

    INPUT:

    - ``cost_type`` -- one of ``cost_types_available``

    - ``scorer_cmd``, ``model`` -- for ``ir-analysis`` (one is required)

    - ``mca_cmd``, ``pattern`` -- for ``mca``

    - ``use_features`` -- whether ``ir-analysis`` is fed the collected
      feature history; otherwise the scorer receives the IR path
    """
    def __init__(self, cost_type, scorer_cmd=None, model=None, mca_cmd=None,
                 timeout=60, pattern=MCA_PATTERN, use_features=False):
        if cost_type not in cost_types_available:
            msg = "unknown cost type {!r} (choose from {})"
            raise ConfigException(msg.format(cost_type, ', '.join(cost_types_available)))
        if cost_type == 'ir-analysis':
            if scorer_cmd is None and model is None:
                raise ConfigException("cost type ir-analysis needs --scorer-cmd or --model")
            if model is not None and not use_features:
                raise ConfigException("the linear model needs --use-protean-collect")
        if cost_type == 'mca' and mca_cmd is None:
            raise ConfigException("cost type mca needs --mca-cmd")
        self.cost_type = cost_type
        self.scorer_cmd = scorer_cmd
        self.model = model
        self.mca_cmd = mca_cmd
        self.timeout = timeout
        self.pattern = pattern
        self.use_features = use_features

    @property
    def needs_features(self):
        return self.cost_type == 'ir-analysis' and self.use_features

    @property
    def needs_cycles(self):
        return self.cost_type == 'mca'

    def score(self, ir, baseline, history=None):
        if self.cost_type == 'instcount':
            return score_instcount(ir, baseline.instcount)
        if self.cost_type == 'filesize':
            return score_filesize(ir, baseline.bytes)
        if self.cost_type == 'mca':
            return score_mca(self.mca_cmd, ir, baseline.cycles,
                             self.timeout, self.pattern)
        if self.model is not None:
            return score_linear_model(self.model, history)
        return score_external(self.scorer_cmd,
                              history if self.use_features else None,
                              self.timeout, ir_path=ir)
