import json
import os
import shlex

import pytest

from phase_tuner.cli import (build_parser, parse_args, normalize_args,
                             expand_protean_args, load_config_file, main)
from phase_tuner.util import ConfigException, UsageError

DATA = os.path.join(os.path.dirname(__file__), 'data')

FAILING = """
import sys
sys.exit(1)
"""


def command(argv):
    return ' '.join(shlex.quote(arg) for arg in argv)


def knobs():
    with open(os.path.join(DATA, 'help_knobs.txt')) as f:
        for line in f:
            if line.strip() and not line.startswith('#'):
                yield line.split()


@pytest.mark.parametrize("option, default", list(knobs()))
def test_help_shows_defaults(option, default):
    parser = build_parser()
    assert parser.get_option(option).help.endswith('[default: {}]'.format(default))


def test_expand_protean_args():
    assert expand_protean_args('-max-iterations=20,-protean-output-table') == \
        ['--max-iterations=20', '--output-table']
    assert expand_protean_args('-protean-use-protean-collect=true,,') == \
        ['--use-protean-collect=true']
    with pytest.raises(UsageError):
        expand_protean_args('max-iterations=20')


def test_normalize_args():
    argv = ['--protean-args', '-engine=ga,-feature-dump=no', '--output-table=true', 'a.ll']
    assert normalize_args(argv) == ['--engine=ga', '--no-feature-dump',
                                    '--output-table', 'a.ll']
    assert normalize_args(['--protean-args=-t-floor=0.5']) == ['--t-floor=0.5']
    with pytest.raises(UsageError):
        normalize_args(['--protean-args'])
    with pytest.raises(UsageError):
        normalize_args(['--feature-dump=maybe'])


def test_parse_args_leaves_unset_options_none():
    options, inputs = parse_args(['--max-iterations', '20', '--use-protean-collect=false',
                                  'a.ll', 'b.ll'])
    assert inputs == ['a.ll', 'b.ll']
    assert options.max_iterations == 20
    assert options.use_protean_collect is False
    assert options.engine is None
    assert options.mutation_rate is None


def test_parse_args_protean_args():
    options, inputs = parse_args(['--protean-args=-max-iterations=20,-rng-val=7,'
                                  '-protean-output-table', 'm.ll'])
    assert (options.max_iterations, options.rng_val, options.output_table) == (20, 7, True)
    assert inputs == ['m.ll']


def test_parse_args_makes_config_absolute(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    options, _ = parse_args(['--config', 'tuner.conf'])
    assert options.config == str(tmp_path / 'tuner.conf')


@pytest.mark.parametrize("argv", [
    ['--mutation-rate=1.5'],
    ['--crossover-rate=-0.1'],
    ['--workers=-1'],
    ['--engine=tabu'],
    ['--crossover-type=two-point'],
    ['--max-iterations=many'],
    ['--no-such-option'],
])
def test_parse_args_errors(argv):
    with pytest.raises(UsageError):
        parse_args(argv + ['a.ll'])


def test_load_config_file(tmp_path):
    path = tmp_path / 'tuner.conf'
    path.write_text("# settings\n\nmax-iterations = 20\nt_floor = 0.5\n"
                    "use-protean-collect = yes\noptimizer_cmd = opt {input} -o {output}\n")
    assert load_config_file(str(path)) == {'max_iterations': 20, 't_floor': 0.5,
                                           'use_protean_collect': True,
                                           'optimizer_cmd': 'opt {input} -o {output}'}


def test_load_json_config_file(tmp_path):
    path = tmp_path / 'tuner.json'
    path.write_text(json.dumps({'max-iterations': 20, 'engine': 'ga'}))
    assert load_config_file(str(path)) == {'max_iterations': 20, 'engine': 'ga'}
    path.write_text('[1, 2]')
    with pytest.raises(ConfigException, match="JSON object"):
        load_config_file(str(path))


@pytest.mark.parametrize("text, message", [
    ("engine = ga\nspeed = 3\n", ":2: unknown setting 'speed'"),
    ("engine = ga\nengine = anneal\n", ":2: duplicate setting 'engine'"),
    ("# comment\nengine\n", ":2: expected key = value"),
    ("max_iterations = lots\n", ":1: invalid value 'lots'"),
])
def test_config_file_errors(tmp_path, text, message):
    path = tmp_path / 'tuner.conf'
    path.write_text(text)
    with pytest.raises(ConfigException, match=message):
        load_config_file(str(path))
    with pytest.raises(ConfigException):
        load_config_file(str(tmp_path / 'missing.conf'))


def test_main_without_inputs(capsys):
    assert main([]) == 2
    assert 'no input IR files' in capsys.readouterr().err


def test_main_usage_error():
    assert main(['--engine=tabu', 'a.ll']) == 2


def test_main_configuration_error(tmp_path, loop_wrap):
    argv = ['--scratch-dir', str(tmp_path), '--cost-type', 'instcount', loop_wrap]
    assert main(argv) == 2


def test_main_success(tmp_path, loop_wrap, copy_optimizer, capsys):
    json_out = tmp_path / 'results.jsonl'
    argv = ['--optimizer-cmd', command(copy_optimizer), '--cost-type', 'instcount',
            '--library', os.path.join(DATA, 'tiny.lib'), '--scratch-dir', str(tmp_path / 's'),
            '--protean-args=-max-iterations=10,-initial-sample-size=2,-workers=1',
            '--json-out', str(json_out), '--module-level-ipc', loop_wrap]
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert '--module-level-ipc is not supported' in out
    assert 'Best Recipe' in out
    record = json.loads(json_out.read_text())
    assert record['id'] == 'loop_wrap'
    assert record['best_recipe'] == 'ABCDE'
    assert record['best_score'] == 1.0


def test_main_partition_failure(tmp_path, loop_wrap, make_script):
    optimizer = make_script('failing.py', FAILING) + ['{input}', '{output}', '{pipeline}']
    argv = ['--optimizer-cmd', command(optimizer), '--cost-type', 'filesize',
            '--scratch-dir', str(tmp_path / 's'), loop_wrap]
    assert main(argv) == 1


def test_main_rejects_zero_temperature(tmp_path, loop_wrap, copy_optimizer, capsys):
    argv = ['--optimizer-cmd', command(copy_optimizer), '--cost-type', 'instcount',
            '--scratch-dir', str(tmp_path / 's'), '--cooling', 'linear',
            '--t-floor', '0', '--max-temperature', '0', loop_wrap]
    assert main(argv) == 2
    assert 'temperature must be positive' in capsys.readouterr().err
