import io
import json

import pandas as pd
import pytest

from scripts.srsq_backend import SyntheticSpec
from scripts.population import PopulationFrame, generate_synthetic, standardize

IDENTITY = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]


def make_frame(rows, name='test'):
    """Raw frame from (school_id, group_id, a, b, c) tuples"""
    table = pd.DataFrame(rows, columns=['school_id', 'group_id', 'var_a', 'var_b', 'var_c'])
    for column in ('var_a', 'var_b', 'var_c'):
        table[column] = table[column].astype(float)
    return PopulationFrame(name, table)


def csv_text(rows):
    lines = ['school_id,group_id,var_a,var_b,var_c']
    lines += [','.join(str(v) for v in row) for row in rows]
    return io.StringIO('\n'.join(lines) + '\n')


def synthetic_frame(n, seed, correlation=None, name='national'):
    """Standardized synthetic population with standard-normal marginals"""
    spec = SyntheticSpec.from_dict({'n_schools': n, 'correlation': correlation or IDENTITY,
                                    'seed': seed, 'name': name})
    return standardize(generate_synthetic(spec))


@pytest.fixture
def twelve_schools():
    """Twelve schools; a orders the strata, b is a scrambled copy for the quota bins"""
    b = [7, 2, 11, 5, 9, 1, 12, 4, 8, 3, 10, 6]
    c = [3, 8, 1, 12, 6, 10, 2, 9, 5, 11, 4, 7]
    rows = [(f'S{i + 1:02d}', 'g', i + 1, b[i], c[i]) for i in range(12)]
    return standardize(make_frame(rows, 'twelve'))


@pytest.fixture(scope='session')
def population_10k():
    return synthetic_frame(10_000, seed=20240501)


@pytest.fixture(scope='session')
def population_2k():
    return synthetic_frame(2_000, seed=7)


@pytest.fixture
def write_config(tmp_path):
    """Write an experiment config next to a results directory and return its path"""
    def _write(population=None, **overrides):
        data = {
            'population': population or {
                'synthetic': {'n_schools': 1200, 'correlation': IDENTITY, 'seed': 11},
                'name': 'national',
            },
            'replications': 12,
            'master_seed': 3,
            'groups': [],
            'output_dir': str(tmp_path / 'out'),
        }
        data.update(overrides)
        path = tmp_path / 'config.json'
        path.write_text(json.dumps(data), encoding='utf-8')
        return str(path)
    return _write
