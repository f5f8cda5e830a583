import json

import numpy as np
import pytest
import torch as ch

from medanon.anonymizer import PrivacyConfig
from medanon.datasets import CKD, NUMERIC, FeatureSpec, TabularDataset
from medanon.train import train_anonymizer, train_target

ch.set_num_threads(1)

WDBC_ROWS, WDBC_MALIGNANT = 569, 212
CKD_ROWS = 400

CKD_NUMERIC_CENTRES = {
    'age': 50, 'bp': 76, 'sg': 1.017, 'al': 1, 'su': 0.4, 'bgr': 148,
    'bu': 57, 'sc': 3, 'sod': 137, 'pot': 4.6, 'hemo': 12.5, 'pcv': 38,
    'wc': 8400, 'rc': 4.7,
}


def write_wdbc(path, rows=WDBC_ROWS, seed=0, header=False):
    """A WDBC-shaped file: id, M|B, 30 positive reals."""
    rng = np.random.default_rng(seed)
    y = np.zeros(rows, dtype=int)
    y[:WDBC_MALIGNANT * rows // WDBC_ROWS] = 1
    rng.shuffle(y)
    X = np.abs(10 + 3 * (rng.normal(size=(rows, 30)) + 1.5 * y[:, None]))
    with open(path, 'w') as f:
        if header:
            f.write(','.join(['id', 'diagnosis'] + [f'f{j}' for j in range(30)])
                    + '\n')
        for i in range(rows):
            f.write(','.join([str(842302 + i), 'M' if y[i] else 'B']
                             + [f'{v:.6f}' for v in X[i]]) + '\n')
    return str(path)


def write_ckd(path, rows=CKD_ROWS, seed=0, missing=0.05):
    """A CKD-shaped file with an id column, a header and '?' cells."""
    rng = np.random.default_rng(seed)
    y = rng.random(rows) < 0.6
    with open(path, 'w') as f:
        f.write(','.join(['id'] + CKD.COLUMNS + ['classification']) + '\n')
        for i in range(rows):
            cells = []
            for c in CKD.COLUMNS:
                if rng.random() < missing:
                    cells.append('?')
                elif c in CKD.CATEGORIES:
                    p = 0.7 if y[i] else 0.2
                    cells.append(CKD.CATEGORIES[c][int(rng.random() < p)])
                else:
                    centre = CKD_NUMERIC_CENTRES[c]
                    shift = 0.3 if y[i] else -0.3
                    cells.append(f'{abs(centre * (1 + shift + 0.2 * rng.normal())):.4f}')
            cells.append('ckd' if y[i] else 'notckd')
            f.write(','.join([str(i)] + cells) + '\n')
    return str(path)


def write_generic(path, rows=120, seed=0):
    rng = np.random.default_rng(seed)
    with open(path, 'w') as f:
        f.write('pid,age,smoker,outcome\n')
        for i in range(rows):
            smoker = 'yes' if rng.random() < 0.4 else 'no'
            age = 30 + 40 * rng.random()
            outcome = int(age > 50 or smoker == 'yes')
            f.write(f'{i},{age:.2f},{smoker},{outcome}\n')
    with open(str(path) + '.schema.json', 'w') as f:
        json.dump({'features': {'age': 'numeric', 'smoker': 'categorical'},
                   'label': 'outcome', 'positive': '1'}, f)
    return str(path)


def make_toy(n=5, train=300, test=60, seed=0):
    """
    A normalized dataset whose label is ``x0 + x1 > 1``, so a logistic
    target learns it almost perfectly.
    """
    rng = np.random.default_rng(seed)
    X = rng.random((train + test, n))
    y = (X[:, 0] + X[:, 1] > 1).astype(np.float64)
    specs = [FeatureSpec(f'x{j}', NUMERIC, observed_min=0.0, observed_max=1.0)
             for j in range(n)]
    return TabularDataset('toy', specs, X[:train], y[:train], X[train:],
                          y[train:], seed)


@pytest.fixture(scope='session')
def data_dir(tmp_path_factory):
    return tmp_path_factory.mktemp('data')


@pytest.fixture(scope='session')
def wdbc_csv(data_dir):
    return write_wdbc(data_dir / 'wdbc.data')


@pytest.fixture(scope='session')
def ckd_csv(data_dir):
    return write_ckd(data_dir / 'ckd.csv')


@pytest.fixture(scope='session')
def generic_csv(data_dir):
    return write_generic(data_dir / 'generic.csv')


@pytest.fixture(scope='session')
def toy():
    return make_toy()


@pytest.fixture(scope='session')
def toy_target(toy):
    return train_target(toy, 'logistic', epochs=40, lr=0.05, batch_size=32,
                        seed=0)


@pytest.fixture(scope='session')
def toy_anonymizer(toy, toy_target):
    return train_anonymizer(toy, toy_target, PrivacyConfig(seed=0), steps=30,
                            batch_size=10, log_iters=10)


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.delenv('MEDANON_OUT_DIR', raising=False)
    return str(tmp_path / 'out')
