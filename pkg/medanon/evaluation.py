"""
Utility evaluation of anonymization mechanisms.

A *mechanism* maps a batch of records and a grid value (``delta`` or
``lambda_e``) to anonymized records. :func:`evaluate_mechanism` sweeps a
mechanism over a grid and, at every point, compares original and
anonymized records (correlation) and the target model's decisions on
them (accuracy, AUC). Results are gathered in a :class:`SweepReport`,
which also carries the per-layer injection table and the feature
correlation matrix and knows how to write itself out as CSV.

Two correlation readings are reported: ``correlation_coefficient`` is
the Pearson correlation between a record and its anonymized version
(across features, averaged over records); ``cc_per_feature`` correlates
each feature across records and averages over features.
"""

import json
import os
import warnings

import numpy as np
import pandas as pd
import torch as ch
from scipy.stats import spearmanr

from .anonymizer import anonymize
from .dp import DpConfig, dp_anonymize, estimate_sensitivity
from .target_models import score
from .tools import constants as consts
from .tools.helpers import (AverageMeter, DegenerateLabelError,
                            UndefinedCorrelationError, accuracy, as_numpy,
                            as_tensor, auc, derive_seeds, ensure_table,
                            pearson)

if int(os.environ.get("NOTEBOOK_MODE", 0)) == 1:
    from tqdm import tqdm_notebook as tqdm
else:
    from tqdm import tqdm


class Mechanism(object):
    '''
    Generic anonymization mechanism; must implement ``apply``.
    ``tag`` names the mechanism in reports, ``param_name`` the grid
    parameter it is swept over.
    '''
    tag = None
    param_name = None

    def apply(self, X, value, seed):
        '''
        Anonymize the records ``X`` (``(batch, n)``) at grid value
        ``value``, drawing all randomness from ``seed``.
        '''
        raise NotImplementedError


class IdentityMechanism(Mechanism):
    tag = 'identity'
    param_name = 'none'

    def apply(self, X, value, seed):
        return as_tensor(X).clone()


class LaplaceMechanism(Mechanism):
    '''
    The DP baseline, swept over its ``delta``.
    '''
    tag = 'dp'
    param_name = 'delta'

    def __init__(self, sensitivity):
        self.sensitivity = np.asarray(sensitivity, dtype=np.float64)

    @classmethod
    def from_dataset(cls, ds):
        return cls(estimate_sensitivity(ds))

    def apply(self, X, value, seed):
        return dp_anonymize(X, DpConfig(value, self.sensitivity, seed))


class AnonymizerMechanism(Mechanism):
    '''
    One trained anonymizer, swept over the inference-time ``delta``.
    '''
    tag = 'anomigan'
    param_name = 'delta'

    def __init__(self, model, injection=None):
        self.model, self.injection = model, injection

    def apply(self, X, value, seed):
        return anonymize(self.model, X, seed, delta=value,
                         injection=self.injection)


class RetrainedAnonymizerMechanism(Mechanism):
    '''
    One anonymizer per grid value of ``lambda_e``; each runs at the
    ``delta`` it was trained with.
    '''
    tag = 'anomigan'
    param_name = 'lambda_e'

    def __init__(self, models, injection=None):
        self.models, self.injection = dict(models), injection

    def apply(self, X, value, seed):
        if value not in self.models:
            raise KeyError(f"no anonymizer trained for lambda_e={value}")
        return anonymize(self.models[value], X, seed, injection=self.injection)


def check_grid(grid):
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("the parameter grid is empty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError(f"the parameter grid must be strictly increasing, "
                         f"got {grid}")
    return grid


def record_correlations(X, X_hat):
    """
    Pearson correlation of every record with its anonymized version.
    Returns the defined values and the number of undefined ones.
    """
    X, X_hat = as_numpy(X), as_numpy(X_hat)
    values, undefined = [], 0
    for a, b in zip(X, X_hat):
        try:
            values.append(pearson(a, b))
        except UndefinedCorrelationError:
            undefined += 1
    return values, undefined


def feature_correlations(X, X_hat):
    """Pearson correlation of every feature across the records."""
    X, X_hat = as_numpy(X), as_numpy(X_hat)
    values = []
    if X.shape[0] < 2:
        return values
    for j in range(X.shape[1]):
        try:
            values.append(pearson(X[:, j], X_hat[:, j]))
        except UndefinedCorrelationError:
            pass
    return values


def _safe_auc(scores, labels):
    try:
        return auc(scores, labels)
    except DegenerateLabelError:
        warnings.warn('AUC undefined: a single class among the sampled cases')
        return float('nan')


def _mean(values):
    return float(np.mean(values)) if len(values) else float('nan')


def utility_report(mechanism, value, X, X_hat, y, target):
    """
    Metrics of one anonymized batch: correlations between ``X`` and
    ``X_hat``, and the target model's accuracy/AUC on ``X_hat`` both
    against the true labels ``y`` and against its own decisions on ``X``.
    """
    cc, undefined = record_correlations(X, X_hat)
    scores_hat = score(target, X_hat)
    original = (score(target, X) >= target.threshold).to(scores_hat.dtype)
    return {
        'mechanism': mechanism.tag,
        'param_name': mechanism.param_name,
        'param': float(value),
        'n_cases': int(X.shape[0]),
        'correlation_coefficient': _mean(cc),
        'cc_per_feature': _mean(feature_correlations(X, X_hat)),
        'n_undefined_cc': undefined,
        'accuracy': accuracy(scores_hat, y, target.threshold),
        'auc': _safe_auc(scores_hat, y),
        'accuracy_vs_original': accuracy(scores_hat, original,
                                         target.threshold),
        'auc_vs_original': _safe_auc(scores_hat, original),
    }


def evaluate_mechanism(mechanism, ds, target, grid=consts.DEFAULT_GRID,
                       n_cases=1000, seed=0, store=None):
    """
    Sweeps a mechanism over a parameter grid on the test split.

    At every grid point ``n_cases`` test records are drawn with
    replacement, anonymized, and scored (see :func:`utility_report`).
    Each grid point draws from its own seed derived from ``seed``, so
    points can be evaluated in any order.

    Args:
        mechanism (Mechanism) : mechanism to evaluate
        ds (TabularDataset) : normalized dataset with labels
        target (TargetModel) : frozen target model
        grid (iterable of float) : strictly increasing grid values
        n_cases (int) : records sampled per grid point
        seed (int) : root seed
        store (cox.Store) : if given, rows also go to the ``sweep`` table

    Returns:
        A :class:`SweepReport` with one row per grid point.
    """
    grid = check_grid(grid)
    if n_cases < 1:
        raise ValueError("n_cases must be at least 1")
    X, y = ds.test_X, ds.test_y
    report = SweepReport(grid)
    iterator = tqdm(list(zip(grid, derive_seeds(seed, len(grid)))))
    for value, point_seed in iterator:
        sample_seed, mech_seed = derive_seeds(point_seed, 2)
        idx = np.random.default_rng(sample_seed).integers(0, X.shape[0], n_cases)
        idx = ch.from_numpy(idx)
        X_hat = mechanism.apply(X[idx], value, mech_seed)
        row = utility_report(mechanism, value, X[idx], X_hat, y[idx], target)
        iterator.set_description(f"{mechanism.tag} {mechanism.param_name}="
                                 f"{value:g} | Acc {row['accuracy']:.3f} | "
                                 f"CC {row['correlation_coefficient']:.3f} ||")
        report.add(row)
        if store is not None:
            ensure_table(store, consts.SWEEP_TABLE, consts.REPORT_SCHEMA)
            store[consts.SWEEP_TABLE].append_row(row)
    return report


def per_layer_table(model, ds, target, trials=1000, seed=0, delta=None,
                    store=None):
    """
    Injects noise into one fixed encoder layer at a time, anonymizes the
    whole test split ``trials`` times per layer and averages the metrics.
    The first row (``layer='off'``) is a single pass without injection.

    Returns:
        A DataFrame with columns ``constants.PER_LAYER_COLUMNS``.
    """
    if model.variance_store.is_empty():
        raise ValueError("per-layer table needs a populated variance store")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    X, y = ds.test_X, ds.test_y
    seeds = derive_seeds(seed, trials)

    def metrics(x_hat):
        cc, _ = record_correlations(X, x_hat)
        s = score(target, x_hat)
        return _mean(cc), accuracy(s, y, target.threshold), _safe_auc(s, y)

    rows = []
    cc, acc, roc = metrics(anonymize(model, X, seeds[0], delta=delta,
                                     injection='off'))
    rows.append({'layer': 'off', 'trials': 1, 'correlation_coefficient': cc,
                 'accuracy': acc, 'auc': roc})
    for i, name in enumerate(model.layer_names):
        meters = [AverageMeter() for _ in range(3)]
        iterator = tqdm(seeds)
        for trial_seed in iterator:
            for meter, v in zip(meters, metrics(
                    anonymize(model, X, trial_seed, delta=delta,
                              injection=f'layer:{i + 1}'))):
                meter.update(v)
            iterator.set_description(f"{name} | Acc {meters[1].avg:.3f} | "
                                     f"CC {meters[0].avg:.3f} ||")
        rows.append({'layer': name, 'trials': trials,
                     'correlation_coefficient': meters[0].avg,
                     'accuracy': meters[1].avg, 'auc': meters[2].avg})
    if store is not None:
        ensure_table(store, consts.PER_LAYER_TABLE, consts.PER_LAYER_SCHEMA)
        for row in rows:
            store[consts.PER_LAYER_TABLE].append_row(row)
    return pd.DataFrame(rows, columns=consts.PER_LAYER_COLUMNS)


def feature_correlation_matrix(ds):
    """
    Pairwise Pearson correlation between the features over the training
    split.

    Returns:
        A tuple ``(matrix, undefined)``: a symmetric DataFrame indexed by
        feature name with a unit diagonal, and the names of the constant
        features, whose off-diagonal entries are NaN.
    """
    X = as_numpy(ds.train_X)
    Z = X - X.mean(axis=0)
    norms = np.sqrt((Z * Z).sum(axis=0))
    undefined = norms == 0
    safe = np.where(undefined, 1.0, norms)
    C = (Z.T @ Z) / np.outer(safe, safe)
    C = np.clip((C + C.T) / 2, -1.0, 1.0)
    C[undefined, :] = np.nan
    C[:, undefined] = np.nan
    np.fill_diagonal(C, 1.0)
    names = ds.feature_names
    if undefined.any():
        warnings.warn(f"correlation undefined for constant features "
                      f"{[names[i] for i in np.flatnonzero(undefined)]}")
    return (pd.DataFrame(C, index=names, columns=names),
            [names[i] for i in np.flatnonzero(undefined)])


class SweepReport(object):
    '''
    Rows of :func:`utility_report` over a grid, one per (mechanism, grid
    point), plus optional per-layer table and feature correlation matrix.
    '''
    def __init__(self, grid, rows=None, per_layer=None, feature_corr=None):
        self.grid = check_grid(grid)
        self.rows = []
        self.per_layer = per_layer
        self.feature_corr = feature_corr
        for row in rows or []:
            self.add(row)

    def add(self, row):
        if row['param'] not in self.grid:
            raise ValueError(f"{row['param']} is not a grid value")
        key = (row['mechanism'], row['param_name'], row['param'])
        if any((r['mechanism'], r['param_name'], r['param']) == key
               for r in self.rows):
            raise ValueError(f"duplicate report for {key}")
        self.rows.append(dict(row))

    def merge(self, other):
        """Concatenates the rows of two reports over the same grid."""
        if other.grid != self.grid:
            raise ValueError("cannot merge reports over different grids")
        merged = SweepReport(self.grid, self.rows + other.rows,
                             self.per_layer if self.per_layer is not None
                             else other.per_layer,
                             self.feature_corr if self.feature_corr is not None
                             else other.feature_corr)
        return merged

    def to_frame(self):
        order = {m: i for i, m in enumerate(
            dict.fromkeys(r['mechanism'] for r in self.rows))}
        rows = sorted(self.rows, key=lambda r: (order[r['mechanism']],
                                                r['param']))
        return pd.DataFrame(rows, columns=consts.REPORT_COLUMNS)

    def trend(self, mechanism, column='accuracy'):
        """Spearman correlation between the grid value and ``column``."""
        df = self.to_frame()
        df = df[df['mechanism'] == mechanism]
        if len(df) < 2:
            return float('nan')
        rho, _ = spearmanr(df['param'], df[column])
        return float(rho)

    def summary(self):
        mechanisms = list(dict.fromkeys(r['mechanism'] for r in self.rows))
        return {
            'grid': self.grid,
            'mechanisms': mechanisms,
            'rows': len(self.rows),
            'accuracy_trend': {m: self.trend(m) for m in mechanisms},
            'correlation_coefficient': 'per-record Pearson across features, '
                                       'averaged over sampled cases',
            'cc_per_feature': 'per-feature Pearson across sampled cases, '
                              'averaged over features',
        }

    def save(self, out_dir):
        """Writes the report's CSV files and its JSON summary to ``out_dir``."""
        path = os.path.join(out_dir, consts.SWEEP_CSV)
        self.to_frame().to_csv(path, index=False)
        if self.per_layer is not None:
            self.per_layer.to_csv(os.path.join(out_dir, consts.PER_LAYER_CSV),
                                  index=False)
        if self.feature_corr is not None:
            self.feature_corr.to_csv(os.path.join(out_dir,
                                                  consts.FEATURE_CORR_CSV))
        write_summary(path, self.summary())
        print(f"=> wrote {len(self.rows)} report rows to '{path}'")
        return path


def write_summary(csv_path, summary):
    with open(csv_path + consts.SUMMARY_SUFFIX, 'w') as f:
        json.dump(summary, f, indent=2, sort_keys=True)
