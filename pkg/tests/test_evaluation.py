import json
import os

import numpy as np
import pandas as pd
import pytest

from medanon.anonymizer import AnonymizerModel
from medanon.datasets import NUMERIC, FeatureSpec, TabularDataset
from medanon.evaluation import (AnonymizerMechanism, IdentityMechanism,
                                LaplaceMechanism, RetrainedAnonymizerMechanism,
                                SweepReport, check_grid, evaluate_mechanism,
                                feature_correlation_matrix, per_layer_table,
                                record_correlations, utility_report)
from medanon.tools import constants


def test_identity_mechanism_is_perfect(toy, toy_target):
    X, y = toy.test_X, toy.test_y
    row = utility_report(IdentityMechanism(), 0.5, X, X.clone(), y, toy_target)
    assert row['correlation_coefficient'] == pytest.approx(1.0, abs=1e-12)
    assert row['cc_per_feature'] == pytest.approx(1.0, abs=1e-12)
    assert row['accuracy_vs_original'] == 1.0
    assert row['accuracy'] == toy_target.metadata['test_accuracy']
    assert set(row) == set(constants.REPORT_COLUMNS)


@pytest.mark.parametrize('grid', [[], [0.2, 0.1], [0.1, 0.1]])
def test_check_grid_rejects(grid):
    with pytest.raises(ValueError):
        check_grid(grid)


def test_record_correlations_count_constant_records():
    X = np.array([[0.1, 0.5, 0.9], [0.3, 0.3, 0.3]])
    values, undefined = record_correlations(X, X)
    assert values == [pytest.approx(1.0)]
    assert undefined == 1


def test_evaluate_identity_over_a_grid(toy, toy_target):
    report = evaluate_mechanism(IdentityMechanism(), toy, toy_target,
                                grid=[0.1, 0.2], n_cases=50, seed=1)
    df = report.to_frame()
    assert len(df) == 2 and (df['n_cases'] == 50).all()
    assert (df['accuracy_vs_original'] == 1.0).all()
    again = evaluate_mechanism(IdentityMechanism(), toy, toy_target,
                               grid=[0.1, 0.2], n_cases=50, seed=1).to_frame()
    pd.testing.assert_frame_equal(df, again)


def test_laplace_utility_improves_with_delta(toy, toy_target):
    report = evaluate_mechanism(LaplaceMechanism.from_dataset(toy), toy,
                                toy_target, grid=[0.1, 1.0, 10.0],
                                n_cases=500, seed=0)
    df = report.to_frame()
    cc = df['correlation_coefficient'].tolist()
    assert cc[0] < cc[1] < cc[2]
    assert df['accuracy'].iloc[-1] > df['accuracy'].iloc[0]
    assert report.trend('dp', 'correlation_coefficient') == pytest.approx(1.0)


def test_anonymizer_sweep(toy, toy_anonymizer, toy_target):
    report = evaluate_mechanism(AnonymizerMechanism(toy_anonymizer), toy,
                                toy_target, grid=constants.DEFAULT_GRID,
                                n_cases=40, seed=0)
    df = report.to_frame()
    assert len(df) == 10
    assert (df['mechanism'] == 'anomigan').all()
    assert df['accuracy'].between(0, 1).all()
    assert df['param'].tolist() == list(constants.DEFAULT_GRID)


def test_retrained_mechanism_needs_a_model_per_value(toy, toy_anonymizer,
                                                     toy_target):
    mech = RetrainedAnonymizerMechanism({0.5: toy_anonymizer})
    report = evaluate_mechanism(mech, toy, toy_target, grid=[0.5], n_cases=10)
    assert report.to_frame()['param_name'].tolist() == ['lambda_e']
    with pytest.raises(KeyError):
        evaluate_mechanism(mech, toy, toy_target, grid=[0.5, 0.6], n_cases=10)


def test_per_layer_table(toy, toy_anonymizer, toy_target):
    table = per_layer_table(toy_anonymizer, toy, toy_target, trials=2, seed=0)
    assert list(table.columns) == constants.PER_LAYER_COLUMNS
    assert table['layer'].tolist() == ['off'] + toy_anonymizer.layer_names
    assert table['trials'].tolist() == [1] + [2] * 7
    assert table['accuracy'].between(0, 1).all()


def test_per_layer_table_needs_variances(toy, toy_target):
    model = AnonymizerModel(toy.n).reset_parameters(0).eval()
    with pytest.raises(ValueError, match='variance store'):
        per_layer_table(model, toy, toy_target, trials=1)


def test_feature_correlation_matrix(toy):
    corr, undefined = feature_correlation_matrix(toy)
    expected = np.corrcoef(toy.train_X.numpy().T)
    assert np.allclose(corr.values, expected, atol=1e-12)
    assert undefined == []
    assert list(corr.index) == toy.feature_names


def test_feature_correlation_matrix_with_constant_feature():
    specs = [FeatureSpec('a', NUMERIC), FeatureSpec('c', NUMERIC)]
    ds = TabularDataset('t', specs, [[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]],
                        None, [[0.2, 0.0]], None, 0)
    with pytest.warns(UserWarning, match='constant'):
        corr, undefined = feature_correlation_matrix(ds)
    assert undefined == ['c']
    assert np.isnan(corr.loc['a', 'c']) and corr.loc['c', 'c'] == 1.0


def _row(mech, param, name='delta'):
    return {'mechanism': mech, 'param_name': name, 'param': param,
            'n_cases': 1, 'correlation_coefficient': param,
            'cc_per_feature': param, 'n_undefined_cc': 0, 'accuracy': param,
            'auc': param, 'accuracy_vs_original': 1.0, 'auc_vs_original': 1.0}


def test_sweep_report_bookkeeping(tmp_path):
    report = SweepReport([0.1, 0.2], [_row('dp', 0.2), _row('dp', 0.1)])
    with pytest.raises(ValueError, match='duplicate'):
        report.add(_row('dp', 0.1))
    with pytest.raises(ValueError, match='grid'):
        report.add(_row('dp', 0.3))
    with pytest.raises(ValueError):
        report.merge(SweepReport([0.1]))
    merged = SweepReport([0.1, 0.2], [_row('anomigan', 0.1),
                                      _row('anomigan', 0.2)]).merge(report)
    df = merged.to_frame()
    assert df['mechanism'].tolist() == ['anomigan'] * 2 + ['dp'] * 2
    assert df['param'].tolist() == [0.1, 0.2, 0.1, 0.2]
    assert merged.trend('dp') == pytest.approx(1.0)

    path = merged.save(str(tmp_path))
    assert os.path.basename(path) == constants.SWEEP_CSV
    assert len(pd.read_csv(path)) == 4
    with open(path + constants.SUMMARY_SUFFIX) as f:
        summary = json.load(f)
    assert summary['rows'] == 4
    assert summary['mechanisms'] == ['anomigan', 'dp']
