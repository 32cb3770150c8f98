import math

import numpy as np
import pytest

from phase_tuner.cost_models import (ScoreOutcome, Baseline, FeatureVector,
                                     HistoryBuffer, LinearModel, CostModel,
                                     push_history, aggregate_history, history_csv,
                                     score_external, score_instcount,
                                     score_filesize, score_mca, measure_cycles,
                                     score_linear_model, count_instructions)
from phase_tuner.util import ConfigException, InfrastructureError

SUM_SCORER = """
import sys
header, values = sys.stdin.read().splitlines()
print(1 + sum(float(v) for v in values.split(',')))
"""

PATH_SCORER = """
import os
import sys
header, path = sys.stdin.read().splitlines()
assert header == 'ir-path' and os.path.exists(path)
print(2.5)
"""

ECHO_SCORER = """
import sys
sys.stdin.read()
print(sys.argv[1])
"""

CRASH_SCORER = """
import sys
sys.stderr.write('model not loaded')
sys.exit(3)
"""

SLOW_SCORER = """
import time
time.sleep(10)
print(1.0)
"""

FAKE_MCA = """
import sys
assert sys.argv[-1].endswith('.ll')
print('Iterations:        100')
print('Total Cycles:      250')
print('Total uOps:        400')
"""


def test_score_outcome():
    ok = ScoreOutcome.success(1.5)
    assert ok.ok and ok.score == 1.5 and ok.reason is None
    bad = ScoreOutcome.failed("timeout")
    assert not bad.ok and bad.score is None
    assert ok == ScoreOutcome.success(1.5)
    assert bad != ok
    assert repr(bad) == "Failed('timeout')"
    for score in (0, -1.0, math.nan, math.inf):
        with pytest.raises(ValueError):
            ScoreOutcome.success(score)
    with pytest.raises(ValueError):
        ScoreOutcome.failed('')


def test_feature_vector():
    fv = FeatureVector([1, 2, 3])
    assert len(fv) == 3
    assert fv == FeatureVector(np.array([1.0, 2.0, 3.0]))
    assert fv != FeatureVector([1, 2, 3], 'other')
    with pytest.raises(ValueError):
        fv.values[0] = 5
    with pytest.raises(ValueError):
        FeatureVector([1, math.nan])
    with pytest.raises(ValueError):
        FeatureVector([[1, 2], [3, 4]])


def test_history_window():
    h = HistoryBuffer(['a', 'b'], window=5)
    for i in range(7):
        push_history(h, FeatureVector([i, 10 * i]))
    assert len(h) == 5
    assert [fv.values[0] for fv in h] == [2, 3, 4, 5, 6]
    assert list(aggregate_history(h).values) == [4.0, 40.0]


def test_history_rejects_other_schemas():
    h = HistoryBuffer(['a', 'b'])
    with pytest.raises(ValueError):
        h.push(FeatureVector([1, 2, 3]))
    with pytest.raises(ValueError):
        h.push(FeatureVector([1, 2], 'other'))
    with pytest.raises(ValueError):
        aggregate_history(h)


def test_history_csv():
    h = HistoryBuffer(['a', 'b'])
    h.push(FeatureVector([0, 2])).push(FeatureVector([1, 0]))
    assert history_csv(h) == "a,b\n0.5,1.0\n"


def test_external_scorer_reads_history(make_script):
    h = HistoryBuffer(['a', 'b'])
    h.push(FeatureVector([1, 2]))
    assert score_external(make_script('sum.py', SUM_SCORER), h) == ScoreOutcome.success(4.0)


def test_external_scorer_reads_path(make_script, loop_wrap):
    outcome = score_external(make_script('path.py', PATH_SCORER), None, ir_path=loop_wrap)
    assert outcome == ScoreOutcome.success(2.5)


@pytest.mark.parametrize("printed", ["abc", "nan", "-1", "0", "inf"])
def test_external_scorer_unparseable(make_script, printed):
    cmd = make_script('echo.py', ECHO_SCORER) + [printed]
    assert score_external(cmd, None, ir_path='x.ll') == ScoreOutcome.failed("unparseable")


def test_external_scorer_crash(make_script):
    outcome = score_external(make_script('crash.py', CRASH_SCORER), None, ir_path='x.ll')
    assert not outcome.ok
    assert 'status 3' in outcome.reason
    assert 'model not loaded' in outcome.reason


def test_external_scorer_timeout(make_script):
    outcome = score_external(make_script('slow.py', SLOW_SCORER), None,
                             timeout=0.5, ir_path='x.ll')
    assert outcome == ScoreOutcome.failed("timeout")


def test_external_scorer_missing(tmp_path):
    with pytest.raises(InfrastructureError):
        score_external([str(tmp_path / 'no-such-scorer')], None, ir_path='x.ll')


def test_instcount(loop_wrap, tmp_path):
    assert count_instructions(loop_wrap) == 14
    assert score_instcount(loop_wrap, 28) == ScoreOutcome.success(2.0)
    assert score_instcount(loop_wrap, 28) == score_instcount(loop_wrap, 28)
    assert not score_instcount(str(tmp_path / 'missing.ll'), 28).ok
    empty = tmp_path / 'empty.ll'
    empty.write_text("; ModuleID = 'empty'\ndeclare void @f()\n")
    assert score_instcount(str(empty), 28) == \
        ScoreOutcome.failed("candidate has no instructions")
    broken = tmp_path / 'broken.ll'
    broken.write_text("define void @f() {\n  ret void\n")
    assert not score_instcount(str(broken), 28).ok


def test_filesize(tmp_path):
    ir = tmp_path / 'a.ll'
    ir.write_bytes(b'x' * 100)
    assert score_filesize(str(ir), 200) == ScoreOutcome.success(2.0)
    ir.write_bytes(b'')
    assert not score_filesize(str(ir), 200).ok


def test_mca(make_script, loop_wrap):
    cmd = make_script('mca.py', FAKE_MCA)
    assert measure_cycles(cmd, loop_wrap) == (250, None)
    assert score_mca(cmd, loop_wrap, 500) == ScoreOutcome.success(2.0)
    assert score_mca(cmd + ['{input}'], loop_wrap, 500) == ScoreOutcome.success(2.0)
    cycles, reason = measure_cycles(cmd, loop_wrap, pattern='Block RThroughput:')
    assert cycles is None and 'not found' in reason
    assert measure_cycles(cmd, loop_wrap, pattern='Total uOps:') == (400, None)


def test_linear_model_matches_dot_product():
    rng = np.random.default_rng(7)
    weights = rng.normal(size=141)
    features = rng.normal(size=141)
    model = LinearModel(0.25, weights)
    expected = 0.25 + sum(w * x for w, x in zip(weights, features))
    assert model.predict(FeatureVector(features)) == pytest.approx(expected, abs=1e-12)


def test_linear_model_floor():
    h = HistoryBuffer(['a', 'b'])
    h.push(FeatureVector([1, 1]))
    assert score_linear_model(LinearModel(-5, [1, 1]), h) == ScoreOutcome.success(1e-6)
    assert score_linear_model(LinearModel(1, [1, 1]), h) == ScoreOutcome.success(3.0)


def test_linear_model_load(tmp_path):
    path = tmp_path / 'weights.txt'
    path.write_text("0.5\n1\n\n2\n")
    model = LinearModel.load(str(path), dimension=2)
    assert model.bias == 0.5
    assert list(model.weights) == [1.0, 2.0]
    with pytest.raises(ConfigException, match="2 weights"):
        LinearModel.load(str(path), dimension=3)
    path.write_text("0.5\nabc\n")
    with pytest.raises(ConfigException, match=":2: not a number"):
        LinearModel.load(str(path))
    path.write_text("\n")
    with pytest.raises(ConfigException):
        LinearModel.load(str(path))
    with pytest.raises(ConfigException):
        LinearModel.load(str(tmp_path / 'missing.txt'))


def test_cost_model_validation():
    with pytest.raises(ConfigException, match="unknown cost type"):
        CostModel('runtime')
    with pytest.raises(ConfigException):
        CostModel('ir-analysis')
    with pytest.raises(ConfigException):
        CostModel('ir-analysis', model=LinearModel(0, [1]))
    with pytest.raises(ConfigException):
        CostModel('mca')
    assert CostModel('ir-analysis', model=LinearModel(0, [1]), use_features=True).needs_features
    assert not CostModel('ir-analysis', scorer_cmd='score').needs_features
    assert CostModel('mca', mca_cmd='llvm-mca').needs_cycles
    assert not CostModel('instcount').needs_cycles


def test_cost_model_dispatch(loop_wrap, make_script):
    baseline = Baseline(instcount=7, bytes=1, cycles=125)
    assert CostModel('instcount').score(loop_wrap, baseline) == ScoreOutcome.success(0.5)
    assert CostModel('filesize').score(loop_wrap, baseline).score < 1
    mca = CostModel('mca', mca_cmd=make_script('mca.py', FAKE_MCA))
    assert mca.score(loop_wrap, baseline) == ScoreOutcome.success(0.5)
    external = CostModel('ir-analysis', scorer_cmd=make_script('path.py', PATH_SCORER))
    assert external.score(loop_wrap, baseline) == ScoreOutcome.success(2.5)
    h = HistoryBuffer(['a', 'b'])
    h.push(FeatureVector([1, 2]))
    surrogate = CostModel('ir-analysis', model=LinearModel(1, [1, 0]), use_features=True)
    assert surrogate.score(loop_wrap, baseline, h) == ScoreOutcome.success(2.0)
