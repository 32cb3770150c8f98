import os
import sys
import textwrap

import pytest

DATA = os.path.join(os.path.dirname(__file__), 'data')

COPY = """
import shutil
import sys
shutil.copyfile(sys.argv[1], sys.argv[2])
"""

# appends the pipeline, so every recipe yields a distinct output
ANNOTATE = """
import sys
src, out, pipeline = sys.argv[1:4]
with open(src) as f:
    text = f.read()
with open(out, 'w') as f:
    f.write(text + '; ' + pipeline + '\\n')
"""

# fails for about half of the pipelines, by hash
FLAKY = """
import hashlib
import sys
src, out, pipeline = sys.argv[1:4]
with open(sys.argv[4], 'a') as log:
    failed = hashlib.md5(pipeline.encode()).digest()[0] % 2 == 1
    log.write('{} {}\\n'.format('FAIL' if failed else 'OK', pipeline))
if failed:
    sys.stderr.write('crash on ' + pipeline + '\\n')
    sys.exit(1)
with open(src) as f:
    text = f.read()
with open(out, 'w') as f:
    f.write(text + '; ' + pipeline + '\\n')
"""


@pytest.fixture(autouse=True)
def no_scratch_env(monkeypatch):
    monkeypatch.delenv('PHASE_TUNER_SCRATCH', raising=False)


@pytest.fixture
def make_script(tmp_path):
    """
    Write a Python script and return the argument vector running it.
    """
    def make(name, body):
        path = tmp_path / name
        path.write_text(textwrap.dedent(body))
        return [sys.executable, str(path)]
    return make


@pytest.fixture
def tiny_lib():
    return os.path.join(DATA, 'tiny.lib')


@pytest.fixture
def loop_wrap():
    return os.path.join(DATA, 'loop_wrap.ll')


@pytest.fixture
def copy_optimizer(make_script):
    return make_script('copy_opt.py', COPY) + ['{input}', '{output}', '{pipeline}']


@pytest.fixture
def annotate_optimizer(make_script):
    return make_script('annotate_opt.py', ANNOTATE) + ['{input}', '{output}', '{pipeline}']


@pytest.fixture
def flaky_optimizer(make_script, tmp_path):
    log = str(tmp_path / 'flaky.log')
    argv = make_script('flaky_opt.py', FLAKY) + ['{input}', '{output}', '{pipeline}', log]
    return argv, log
