"""
Desk-scale runs on the WDBC-shaped fixture: an MLP target and anonymizers
trained for a tenth of the reference length. They take minutes, not
seconds, and carry the ``slow`` marker.
"""
import time

import numpy as np
import pytest
import torch as ch

from medanon.anonymizer import AnonymizationSession, PrivacyConfig, anonymize
from medanon.datasets import prepare
from medanon.evaluation import (RetrainedAnonymizerMechanism,
                                evaluate_mechanism, per_layer_table)
from medanon.tools import constants
from medanon.train import train_anonymizer, train_target

from conftest import write_wdbc

pytestmark = pytest.mark.slow

STEPS = 5000
TABLE_TRIALS = 200
TAIL = 500


@pytest.fixture(scope='module')
def wdbc(tmp_path_factory):
    path = write_wdbc(tmp_path_factory.mktemp('desk') / 'wdbc.data')
    ds = prepare(path, 'wdbc', seed=0)
    target = train_target(ds, 'mlp', seed=0)
    model = train_anonymizer(ds, target, PrivacyConfig(seed=0), steps=STEPS)
    return ds, target, model


def test_per_layer_table_stays_in_band(wdbc):
    ds, target, model = wdbc
    table = per_layer_table(model, ds, target, trials=TABLE_TRIALS, seed=0)
    layers = table[table['layer'] != 'off']
    assert len(layers) == 7
    assert layers['correlation_coefficient'].between(0.75, 0.95).all()
    assert (layers['accuracy'] >= 0.85).all()


def test_hundred_calls_give_hundred_outputs(wdbc):
    ds, _, model = wdbc
    x = ds.test_X[0]
    outputs = {anonymize(model, x, 1234, counter=c,
                         injection='layer:3').numpy().tobytes()
               for c in range(100)}
    assert len(outputs) == 100
    off = [anonymize(model, x, 1234, counter=5, injection='off').numpy()
           for _ in range(2)]
    assert off[0].tobytes() == off[1].tobytes()


def test_outputs_are_not_saturated(wdbc):
    ds, _, model = wdbc
    x_hat = anonymize(model, ds.test_X, 0).numpy()
    inside = ((x_hat > 0) & (x_hat < 1)).mean()
    assert inside > 0.5
    assert len(np.unique(x_hat)) > x_hat.size // 2


def test_discriminator_is_kept_guessing(wdbc):
    log = wdbc[2].training_log[-TAIL:]
    cols = constants.TRAIN_LOG_COLUMNS
    real = log[:, cols.index('disc_real')]
    fake = log[:, cols.index('disc_fake')]
    assert 0.35 <= float(((real + fake) / 2).mean()) <= 0.65
    assert float(fake.mean()) > 0.05


@pytest.mark.parametrize('delta', [0.1, 0.3, 1.0])
def test_outputs_never_equal_inputs(wdbc, delta):
    ds, _, model = wdbc
    x_hat = anonymize(model, ds.test_X, 3, delta=delta)
    gap = ch.linalg.vector_norm(ds.test_X - x_hat, dim=1)
    assert float(gap.mean()) > 0
    assert not bool((gap == 0).any())


def test_per_record_latency(wdbc):
    ds, _, model = wdbc
    session = AnonymizationSession(model, session_seed=8)
    start = time.perf_counter()
    for x in ds.test_X:
        session.anonymize(x)
    per_record = (time.perf_counter() - start) / ds.test_X.shape[0]
    assert per_record < 1.0


def test_lambda_e_sweep(wdbc):
    ds, target, _ = wdbc
    cfg = PrivacyConfig(seed=0)
    models = {value: train_anonymizer(ds, target, cfg.replace(lambda_e=value),
                                      steps=STEPS)
              for value in constants.DEFAULT_GRID}
    report = evaluate_mechanism(RetrainedAnonymizerMechanism(models), ds,
                                target, seed=0)
    df = report.to_frame()
    assert len(df) == len(constants.DEFAULT_GRID)
    # more weight on the distance term keeps records closer to the originals
    assert report.trend('anomigan', 'correlation_coefficient') >= 0
    plain = target.metadata['test_accuracy']
    assert (df['accuracy'] >= plain - 0.05).all()
