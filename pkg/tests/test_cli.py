import json
import os

import numpy as np
import pandas as pd
import pytest

from scripts.srsq import main
from scripts.population import load_population, describe
from scripts.design import enumerate_role_permutations
from scripts.srsq_utils import METRICS_COLUMNS
from tests.conftest import IDENTITY


def write_spec(tmp_path, **kw):
    data = {'n_schools': 10_000, 'correlation': IDENTITY, 'seed': 5}
    data.update(kw)
    path = tmp_path / 'spec.json'
    path.write_text(json.dumps(data), encoding='utf-8')
    return str(path)


def read_json(path):
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def test_gen_pop_writes_population_and_summary(tmp_path, capsys):
    out = tmp_path / 'pop.csv'
    assert main(['gen-pop', write_spec(tmp_path), str(out)]) == 0
    assert len(out.read_text(encoding='utf-8').splitlines()) == 10_001
    assert 'Wrote 10000 schools' in capsys.readouterr().out


def test_gen_pop_is_byte_for_byte_repeatable(tmp_path):
    spec = write_spec(tmp_path, n_schools=300)
    assert main(['gen-pop', spec, str(tmp_path / 'one.csv')]) == 0
    assert main(['gen-pop', spec, str(tmp_path / 'two.csv')]) == 0
    assert (tmp_path / 'one.csv').read_bytes() == (tmp_path / 'two.csv').read_bytes()


def test_gen_pop_correlation(tmp_path):
    corr = [[1.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]]
    out = tmp_path / 'pop.csv'
    assert main(['gen-pop', write_spec(tmp_path, correlation=corr), str(out)]) == 0
    summary = describe(load_population(str(out), 'generated'))
    assert summary['correlation'][0][1] == pytest.approx(0.5, abs=0.05)


def test_gen_pop_rejects_invalid_spec(tmp_path):
    out = tmp_path / 'pop.csv'
    assert main(['gen-pop', write_spec(tmp_path, correlation=[[1.0, 0.0], [0.0, 1.0]]), str(out)]) == 1
    assert not out.exists()


def test_simulate_writes_every_artifact(tmp_path, write_config, capsys):
    assert main(['-q', 'simulate', write_config()]) == 0
    out = tmp_path / 'out'
    for roles in enumerate_role_permutations():
        report = read_json(out / 'national' / f'perm{roles.row}_{roles.code}' / 'report.json')
        assert report['report']['SRS']['replications'] == 12
        assert report['design']['roles'] == roles.to_dict()
    averaged = read_json(out / 'national' / 'averaged.json')
    assert averaged['permutations'] == [1, 2, 3, 4, 5, 6]

    metrics = pd.read_csv(out / 'metrics.csv', dtype={'permutation': str})
    assert list(metrics.columns) == list(METRICS_COLUMNS)
    assert len(metrics) == 7 * 2 * 3
    assert not metrics.duplicated(['population', 'permutation', 'method', 'role']).any()
    assert metrics['feasible'].all()

    populations = read_json(out / 'populations.json')
    assert [p['population'] for p in populations] == ['national']
    skipped = read_json(out / 'skipped.json')
    assert [s['population'] for s in skipped] == ['synthetic']
    assert not (out / 'trace.jsonl').exists()
    assert 'results in' in capsys.readouterr().out


def test_simulate_output_does_not_depend_on_worker_count(tmp_path, write_config):
    outputs = []
    for jobs in (1, 8):
        out = tmp_path / f'jobs{jobs}'
        assert main(['-q', 'simulate', write_config(replications=230, output_dir=str(out)),
                     '--jobs', str(jobs)]) == 0
        outputs.append(out)
    first, second = outputs
    assert (first / 'metrics.csv').read_bytes() == (second / 'metrics.csv').read_bytes()
    for root, _, files in os.walk(first):
        for name in files:
            path = os.path.join(root, name)
            twin = os.path.join(second, os.path.relpath(path, first))
            with open(path, 'rb') as a, open(twin, 'rb') as b:
                assert a.read() == b.read(), path


def test_simulate_flag_overrides(tmp_path, write_config):
    assert main(['-q', 'simulate', write_config(), '--replications', '5', '--seed', '99']) == 0
    out = tmp_path / 'out'
    report = read_json(out / 'national' / 'perm3_a-c-b' / 'report.json')
    assert report['report']['SRSQ']['replications'] == 5
    assert read_json(out / 'config.json')['master_seed'] == 99


def test_simulate_rejects_invalid_config(write_config):
    assert main(['simulate', write_config(p_low=2.0)]) == 1


def test_simulate_missing_population_file(write_config):
    assert main(['simulate', write_config(population={'csv': 'nowhere.csv'})]) == 1


def write_groups_csv(path):
    rng = np.random.default_rng(2024)
    rows = []
    for group, n in (('AK', 300), ('DE', 120)):
        values = rng.normal(size=(n, 3))
        rows += [(f'{group}{i:04d}', group, *values[i]) for i in range(n)]
    rows += [(f'HI{i}', 'HI', 5.0, float(i), float(i % 2)) for i in range(6)]
    pd.DataFrame(rows, columns=['school_id', 'group_id', 'var_a', 'var_b', 'var_c']).to_csv(path, index=False)


def test_simulate_groups_with_skip_log_and_feasibility(tmp_path, write_config):
    write_groups_csv(tmp_path / 'schools.csv')
    config = write_config(population={'csv': 'schools.csv', 'name': 'national'}, groups=None, replications=4)
    assert main(['-q', 'simulate', config]) == 0
    out = tmp_path / 'out'
    populations = {p['population']: p for p in read_json(out / 'populations.json')}
    assert list(populations) == ['national', 'AK', 'DE']
    assert populations['national']['feasible']
    assert not populations['DE']['feasible']
    assert populations['DE']['feasibility_threshold'] == pytest.approx(266.6667, abs=1e-3)
    skipped = read_json(out / 'skipped.json')
    assert [s['population'] for s in skipped] == ['HI']
    assert 'var_a' in skipped[0]['reason']
    metrics = pd.read_csv(out / 'metrics.csv')
    assert set(metrics['population']) == {'national', 'AK', 'DE'}
    assert not metrics.loc[metrics['population'] == 'DE', 'feasible'].any()


def test_minimum_population_size_filter(tmp_path, write_config):
    write_groups_csv(tmp_path / 'schools.csv')
    config = write_config(population={'csv': 'schools.csv'}, groups=None, min_population_size=200,
                          replications=2, permutations=[1])
    assert main(['-q', 'simulate', config]) == 0
    skipped = {s['population']: s['reason'] for s in read_json(tmp_path / 'out' / 'skipped.json')}
    assert set(skipped) == {'HI', 'DE'}
    assert 'min_population_size' in skipped['DE']


def write_rows_csv(path, blocks):
    """CSV with one block of standard-normal schools per (group, size)"""
    rng = np.random.default_rng(7)
    rows = []
    for group, n in blocks:
        values = rng.normal(size=(n, 3))
        rows += [(f'{group}{i:04d}', group, *values[i]) for i in range(n)]
    pd.DataFrame(rows, columns=['school_id', 'group_id', 'var_a', 'var_b', 'var_c']).to_csv(path, index=False)


def test_group_too_small_for_the_bins_is_skipped(tmp_path, write_config):
    write_rows_csv(tmp_path / 'schools.csv', [('AK', 300), ('TT', 3)])
    config = write_config(population={'csv': 'schools.csv'}, groups=None, replications=2, permutations=[1])
    assert main(['-q', 'simulate', config]) == 0
    out = tmp_path / 'out'
    assert [p['population'] for p in read_json(out / 'populations.json')] == ['national', 'AK']
    skipped = {s['population']: s for s in read_json(out / 'skipped.json')}
    assert set(skipped) == {'TT'}
    assert skipped['TT']['N'] == 3
    assert '5 bins' in skipped['TT']['reason']
    metrics = pd.read_csv(out / 'metrics.csv')
    assert set(metrics['population']) == {'national', 'AK'}


def test_renamed_group_is_selected_by_its_group_id(tmp_path, write_config):
    write_rows_csv(tmp_path / 'schools.csv', [('AK', 300), ('national', 300)])
    config = write_config(population={'csv': 'schools.csv', 'name': 'national'}, groups=['national'],
                          replications=2, permutations=[1])
    assert main(['-q', 'simulate', config]) == 0
    out = tmp_path / 'out'
    assert [p['population'] for p in read_json(out / 'populations.json')] == ['national', 'national-group']
    assert [s['population'] for s in read_json(out / 'skipped.json')] == ['AK']


def test_trace_lists_every_replication(tmp_path, write_config):
    assert main(['-q', 'simulate', write_config(trace=True, permutations=[2, 1], replications=3)]) == 0
    lines = (tmp_path / 'out' / 'trace.jsonl').read_text(encoding='utf-8').splitlines()
    assert len(lines) == 2 * 3 * 2
    records = [json.loads(line) for line in lines]
    assert [(r['permutation'], r['replication'], r['method']) for r in records[:3]] == [
        (1, 0, 'SRS'), (1, 0, 'SRSQ'), (1, 1, 'SRS')]
    for r in records:
        c = r['counts']
        assert c['contacted'] == c['excluded'] + c['invited']
        assert c['invited'] == c['declined'] + c['agreed']
    assert (tmp_path / 'out' / 'national' / 'averaged.json').exists()


def test_report_emits_figure_data(tmp_path, write_config, capsys):
    assert main(['-q', 'simulate', write_config()]) == 0
    target = tmp_path / 'aux_bias.csv'
    assert main(['report', str(tmp_path / 'out'), '--figure', 'aux_bias', '-o', str(target)]) == 0
    data = pd.read_csv(target)
    assert list(data.columns) == ['population', 'N', 'SRS', 'SRSQ']
    assert data.loc[0, 'SRS'] > data.loc[0, 'SRSQ']
    capsys.readouterr()
    assert main(['report', str(tmp_path / 'out'), '--figure', 'achieved_n']) == 0
    assert capsys.readouterr().out.splitlines()[0] == 'population,N,SRS,SRSQ'


def test_report_on_empty_directory_fails_cleanly(tmp_path):
    (tmp_path / 'empty').mkdir()
    target = tmp_path / 'figure.csv'
    assert main(['report', str(tmp_path / 'empty'), '--figure', 'aux_bias', '-o', str(target)]) == 1
    assert not target.exists()


def test_table_and_stability(tmp_path, write_config, capsys):
    assert main(['-q', 'simulate', write_config(output_dir=str(tmp_path / 'run1'), replications=10)]) == 0
    assert main(['-q', 'simulate', write_config(output_dir=str(tmp_path / 'run2'), replications=20,
                                                master_seed=4)]) == 0
    capsys.readouterr()
    assert main(['table', str(tmp_path / 'run1')]) == 0
    assert 'External Validity Bias (Absolute Value)' in capsys.readouterr().out

    target = tmp_path / 'stability.csv'
    assert main(['stability', str(tmp_path / 'run1'), str(tmp_path / 'run2'), '-o', str(target)]) == 0
    text = capsys.readouterr().out
    assert '10 samples' in text and '20 samples' in text
    diff = pd.read_csv(target)
    assert list(diff.columns) == ['field', '10 samples', '20 samples', 'gap']
    assert main(['table', str(tmp_path / 'run1'), '--population', 'Guam']) == 1
