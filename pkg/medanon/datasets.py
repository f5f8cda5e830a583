"""
Module containing the supported tabular datasets and the functions that turn
a CSV file into a split, cleaned and normalized
:class:`medanon.datasets.TabularDataset`.

Currently supported schemas:

- Wisconsin diagnostic breast cancer, ``wdbc``
  (:class:`medanon.datasets.WDBC`)
- Chronic kidney disease, ``ckd`` (:class:`medanon.datasets.CKD`)
- Any CSV with a header row and a JSON sidecar schema, ``generic``
  (:class:`medanon.datasets.Generic`)

The usual pipeline is

>>> ds = load_csv('/path/to/wdbc.data', 'wdbc', seed=0)
>>> ds = normalize(impute(ds))

Fitting (min/max, median, mode, categorical levels) only ever looks at the
training split.
"""

import csv
import json
import os
import warnings

import numpy as np
import pandas as pd
import torch as ch
from sklearn.model_selection import train_test_split

from .masks import quantize
from .tools.helpers import (ParseError, EncodingError, MissingFeatureError,
                            as_tensor)

NUMERIC = 'numeric'
CATEGORICAL = 'categorical'
MISSING_TOKENS = ('?', '', 'nan', 'NaN', 'NA')
TEST_FRACTION = 0.1
WDBC_PARTS = ['radius', 'texture', 'perimeter', 'area', 'smoothness',
              'compactness', 'concavity', 'concave_points', 'symmetry',
              'fractal_dimension']


class FeatureSpec(object):
    '''
    Metadata for one feature column. Categorical features are stored as
    ordinal codes scaled to [0, 1] (``level_index / (levels - 1)``), so both
    kinds carry an observed range fitted on the training split.
    '''
    def __init__(self, name, kind, categories=None, observed_min=None,
                 observed_max=None):
        if kind not in (NUMERIC, CATEGORICAL):
            raise ValueError(f"unknown feature kind {kind} for {name}")
        if kind == CATEGORICAL and not categories:
            raise ValueError(f"categorical feature {name} needs categories")
        if (observed_min is not None and observed_max is not None
                and observed_min > observed_max):
            raise ValueError(f"observed_min > observed_max for {name}")
        self.name = name
        self.kind = kind
        self.categories = list(categories) if categories else None
        self.observed_min = observed_min
        self.observed_max = observed_max

    def encode(self, value):
        """Code of a categorical level, scaled to [0, 1]."""
        if value not in self.categories:
            raise EncodingError(f"unknown level {value!r} for feature "
                                f"{self.name} (known: {self.categories})")
        levels = len(self.categories)
        return self.categories.index(value) / max(levels - 1, 1)

    def with_range(self, lo, hi):
        return FeatureSpec(self.name, self.kind, self.categories, lo, hi)

    def as_dict(self):
        return {'name': self.name, 'kind': self.kind,
                'categories': self.categories,
                'observed_min': self.observed_min,
                'observed_max': self.observed_max}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def __eq__(self, other):
        return isinstance(other, FeatureSpec) and \
            self.as_dict() == other.as_dict()

    def __repr__(self):
        return f"FeatureSpec({self.name}, {self.kind})"


class TabularDataset(object):
    '''
    A split tabular dataset: feature specs plus train/test feature matrices
    (float64 tensors, one record per row) and optional {0, 1} labels.
    Instances are treated as immutable; the pipeline functions return new
    objects.
    '''
    def __init__(self, ds_name, specs, train_X, train_y, test_X, test_y,
                 seed, degenerate=()):
        self.ds_name = ds_name
        self.specs = list(specs)
        self.train_X = as_tensor(train_X)
        self.test_X = as_tensor(test_X)
        self.train_y = None if train_y is None else as_tensor(train_y)
        self.test_y = None if test_y is None else as_tensor(test_y)
        self.seed = int(seed)
        self.degenerate = tuple(degenerate)
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        for X in (self.train_X, self.test_X):
            if X.shape[1] != len(self.specs):
                raise ValueError(f"matrix width {X.shape[1]} does not match "
                                 f"{len(self.specs)} feature specs")

    @property
    def n(self):
        return len(self.specs)

    @property
    def feature_names(self):
        return [s.name for s in self.specs]

    @property
    def has_labels(self):
        return self.train_y is not None

    def replace(self, **kwargs):
        '''
        Returns a copy with some attributes replaced. (Internal)
        '''
        fields = {'ds_name': self.ds_name, 'specs': self.specs,
                  'train_X': self.train_X, 'train_y': self.train_y,
                  'test_X': self.test_X, 'test_y': self.test_y,
                  'seed': self.seed, 'degenerate': self.degenerate}
        fields.update(kwargs)
        return TabularDataset(**fields)

    def state_dict(self):
        return {'ds_name': self.ds_name,
                'specs': [s.as_dict() for s in self.specs],
                'train_X': self.train_X, 'train_y': self.train_y,
                'test_X': self.test_X, 'test_y': self.test_y,
                'seed': self.seed, 'degenerate': list(self.degenerate)}

    @classmethod
    def from_state_dict(cls, sd):
        sd = dict(sd)
        sd['specs'] = [FeatureSpec.from_dict(s) for s in sd['specs']]
        return cls(**sd)


class DataSet(object):
    '''
    Base class for a CSV schema. Subclasses implement :meth:`read_rows`,
    which turns the file into raw string rows and labels, and declare the
    feature specs via :meth:`make_specs`.
    '''
    def __init__(self, ds_name, data_path, **kwargs):
        """
        Args:
            ds_name (str) : string identifier for the schema
            data_path (str) : path to the CSV file
        """
        if not os.path.isfile(data_path):
            raise FileNotFoundError(f"no such data file: {data_path}")
        self.ds_name = ds_name
        self.data_path = data_path
        self.__dict__.update(kwargs)

    def read_rows(self):
        '''
        Should be overriden by subclasses.

        Returns:
            A tuple ``(rows, labels)``: ``rows`` is a list of
            ``(row_index, values)`` pairs, ``values`` holding one stripped
            string per feature in spec order; ``labels`` is a list of ints in
            {0, 1} (or ``None`` for unlabeled data).
        '''
        raise NotImplementedError

    def make_specs(self, train_rows):
        '''
        Should be overriden by subclasses. Returns feature specs without
        observed ranges; categorical levels may be fitted on ``train_rows``.
        '''
        raise NotImplementedError

    def _csv_rows(self):
        with open(self.data_path, newline='') as f:
            for i, row in enumerate(csv.reader(f)):
                row = [v.strip() for v in row]
                if not any(row):
                    continue
                yield i, row


def _is_float(v):
    try:
        float(v)
        return True
    except ValueError:
        return False


class WDBC(DataSet):
    '''
    Wisconsin diagnostic breast cancer data (UCI): ``id, diagnosis (M|B),
    f1..f30``. A header row is detected and skipped. Malignant maps to 1.
    '''
    FEATURE_NAMES = [f'{p}_{s}' for s in ('mean', 'se', 'worst')
                     for p in WDBC_PARTS]
    LABELS = {'M': 1, 'B': 0}

    def __init__(self, data_path, **kwargs):
        super(WDBC, self).__init__('wdbc', data_path, **kwargs)

    def read_rows(self):
        rows, labels = [], []
        width = 2 + len(self.FEATURE_NAMES)
        for i, row in self._csv_rows():
            if not rows and len(row) > 1 and row[1] not in self.LABELS \
                    and not all(_is_float(v) for v in row[2:]):
                continue  # header
            if len(row) != width:
                raise ParseError(f"row {i}: expected {width} fields, "
                                 f"got {len(row)}")
            if row[1] not in self.LABELS:
                raise ParseError(f"row {i}: diagnosis must be M or B, "
                                 f"got {row[1]!r}")
            if any(v in MISSING_TOKENS for v in row[2:]):
                raise ParseError(f"row {i}: missing value in a WDBC row")
            rows.append((i, row[2:]))
            labels.append(self.LABELS[row[1]])
        return rows, labels

    def make_specs(self, train_rows):
        return [FeatureSpec(name, NUMERIC) for name in self.FEATURE_NAMES]


class CKD(DataSet):
    '''
    Chronic kidney disease data (UCI): 24 attribute columns and a
    ``ckd|notckd`` class column, ``?`` marking missing values. An optional
    leading ``id`` column and an optional header row are handled. The 10
    two-level categorical attributes become {0, 1} columns, so the encoded
    width stays 24. ``ckd`` maps to 1.
    '''
    COLUMNS = ['age', 'bp', 'sg', 'al', 'su', 'rbc', 'pc', 'pcc', 'ba', 'bgr',
               'bu', 'sc', 'sod', 'pot', 'hemo', 'pcv', 'wc', 'rc', 'htn', 'dm',
               'cad', 'appet', 'pe', 'ane']
    # level order fixes the code: first level -> 0, second -> 1
    CATEGORIES = {
        'rbc': ['normal', 'abnormal'],
        'pc': ['normal', 'abnormal'],
        'pcc': ['notpresent', 'present'],
        'ba': ['notpresent', 'present'],
        'htn': ['no', 'yes'],
        'dm': ['no', 'yes'],
        'cad': ['no', 'yes'],
        'appet': ['good', 'poor'],
        'pe': ['no', 'yes'],
        'ane': ['no', 'yes'],
    }
    LABELS = {'ckd': 1, 'notckd': 0}

    def __init__(self, data_path, **kwargs):
        super(CKD, self).__init__('ckd', data_path, **kwargs)

    def read_rows(self):
        rows, labels = [], []
        width = len(self.COLUMNS) + 1
        for i, row in self._csv_rows():
            if not rows and row[-1].lower() in ('class', 'classification'):
                continue  # header
            if len(row) == width + 1:
                row = row[1:]  # leading id column
            if len(row) != width:
                raise ParseError(f"row {i}: expected {width} fields, "
                                 f"got {len(row)}")
            label = row[-1].lower()
            if label not in self.LABELS:
                raise ParseError(f"row {i}: class must be ckd or notckd, "
                                 f"got {row[-1]!r}")
            rows.append((i, [v.lower() if not _is_float(v) else v
                             for v in row[:-1]]))
            labels.append(self.LABELS[label])
        return rows, labels

    def make_specs(self, train_rows):
        return [FeatureSpec(c, CATEGORICAL, self.CATEGORIES[c])
                if c in self.CATEGORIES else FeatureSpec(c, NUMERIC)
                for c in self.COLUMNS]


class Generic(DataSet):
    '''
    Any CSV with a header row. The sidecar schema (JSON, by default
    ``<data_path>.schema.json``) declares the kinds and the label column::

        {"features": {"age": "numeric", "smoker": "categorical"},
         "label": "outcome", "positive": "1"}

    Columns not listed under ``features`` (for example ids) are dropped.
    Categorical levels are fitted on the training split, in sorted order.
    '''
    def __init__(self, data_path, schema_path=None, **kwargs):
        super(Generic, self).__init__('generic', data_path, **kwargs)
        self.schema_path = schema_path or data_path + '.schema.json'
        if not os.path.isfile(self.schema_path):
            raise FileNotFoundError(f"no schema file: {self.schema_path}")
        with open(self.schema_path) as f:
            self.schema = json.load(f)
        if 'features' not in self.schema or not self.schema['features']:
            raise ValueError("schema must declare at least one feature")

    def read_rows(self):
        rows, labels = [], []
        features = list(self.schema['features'])
        label_col = self.schema.get('label')
        positive = str(self.schema.get('positive', '1'))
        header = None
        for i, row in self._csv_rows():
            if header is None:
                header = row
                missing = [c for c in features + ([label_col] if label_col
                           else []) if c not in header]
                if missing:
                    raise ParseError(f"row {i}: header lacks columns {missing}")
                idx = [header.index(c) for c in features]
                continue
            if len(row) != len(header):
                raise ParseError(f"row {i}: expected {len(header)} fields, "
                                 f"got {len(row)}")
            rows.append((i, [row[j] for j in idx]))
            if label_col:
                labels.append(int(row[header.index(label_col)] == positive))
        return rows, (labels if label_col else None)

    def make_specs(self, train_rows):
        specs = []
        for j, (name, kind) in enumerate(self.schema['features'].items()):
            if kind == CATEGORICAL:
                levels = sorted({r[j] for r in train_rows
                                 if r[j] not in MISSING_TOKENS})
                if not levels:
                    raise MissingFeatureError(f"feature {name} is entirely "
                                              "missing in the train split")
                specs.append(FeatureSpec(name, CATEGORICAL, levels))
            else:
                specs.append(FeatureSpec(name, NUMERIC))
        return specs


DATASETS = {
    'wdbc': WDBC,
    'ckd': CKD,
    'generic': Generic,
}
'''
Dictionary of CSV schemas. A schema class can be accessed as:

>>> import medanon.datasets
>>> reader = datasets.DATASETS['wdbc']('/path/to/wdbc.data')
'''


def _encode(rows, specs):
    X = np.empty((len(rows), len(specs)), dtype=np.float64)
    for r, (line, values) in enumerate(rows):
        for j, (v, spec) in enumerate(zip(values, specs)):
            if v in MISSING_TOKENS:
                X[r, j] = np.nan
            elif spec.kind == CATEGORICAL:
                try:
                    X[r, j] = spec.encode(v)
                except EncodingError as e:
                    raise EncodingError(f"row {line}: {e}") from None
            else:
                try:
                    X[r, j] = float(v)
                except ValueError:
                    raise ParseError(f"row {line}: feature {spec.name} is "
                                     f"not numeric: {v!r}") from None
                if not np.isfinite(X[r, j]):
                    raise ParseError(f"row {line}: feature {spec.name} is "
                                     f"not finite: {v!r}")
    return X


def _fit_ranges(specs, train_X):
    fitted = []
    for j, spec in enumerate(specs):
        col = train_X[:, j]
        col = col[~ch.isnan(col)]
        if col.numel() == 0:
            fitted.append(spec.with_range(None, None))
        else:
            fitted.append(spec.with_range(float(col.min()), float(col.max())))
    return fitted


def load_csv(path, schema, seed, schema_path=None):
    """
    Loads a CSV file under one of the :attr:`DATASETS` schemas and splits it
    90/10 into train and test records.

    Args:
        path (str) : CSV file
        schema (str) : one of ``wdbc``, ``ckd``, ``generic``
        seed (int) : split seed; the same (file, seed) always gives the same
            split and bitwise-identical matrices
        schema_path (str) : sidecar schema for ``generic`` (optional)

    Returns:
        A :class:`TabularDataset`. Missing values are NaN until
        :func:`impute` is applied.
    """
    if schema not in DATASETS:
        raise ValueError(f"unknown schema {schema}, choose from "
                         f"{list(DATASETS)}")
    kwargs = {'schema_path': schema_path} if schema == 'generic' else {}
    reader = DATASETS[schema](path, **kwargs)
    rows, labels = reader.read_rows()
    if len(rows) < 2:
        raise ParseError(f"{path}: need at least two records, "
                         f"got {len(rows)}")

    order = np.arange(len(rows))
    train_idx, test_idx = train_test_split(order, test_size=TEST_FRACTION,
                                           random_state=int(seed) % (2 ** 32),
                                           shuffle=True)
    train_idx, test_idx = np.sort(train_idx), np.sort(test_idx)
    train_rows = [rows[i] for i in train_idx]
    test_rows = [rows[i] for i in test_idx]

    specs = reader.make_specs([values for _, values in train_rows])
    train_X = as_tensor(_encode(train_rows, specs))
    test_X = as_tensor(_encode(test_rows, specs))
    specs = _fit_ranges(specs, train_X)

    train_y = test_y = None
    if labels is not None:
        labels = np.asarray(labels, dtype=np.float64)
        train_y, test_y = labels[train_idx], labels[test_idx]

    print(f"==> Loaded {reader.ds_name}: n={len(specs)}, "
          f"{len(train_rows)} train / {len(test_rows)} test records")
    return TabularDataset(reader.ds_name, specs, train_X, train_y, test_X,
                          test_y, seed)


def impute(ds):
    """
    Fills missing values with train-split statistics: the median for
    numeric features, the mode (smallest code on ties) for categorical ones.
    A feature with no observed training value raises
    :class:`MissingFeatureError`.
    """
    train_X, test_X = ds.train_X.clone(), ds.test_X.clone()
    for j, spec in enumerate(ds.specs):
        col = train_X[:, j]
        observed = col[~ch.isnan(col)]
        if observed.numel() == 0:
            raise MissingFeatureError(f"feature {spec.name} is entirely "
                                      "missing in the train split")
        if observed.numel() == col.numel() and \
                not bool(ch.isnan(test_X[:, j]).any()):
            continue
        if spec.kind == CATEGORICAL:
            values, counts = np.unique(observed.numpy(), return_counts=True)
            fill = float(values[np.argmax(counts)])
        else:
            fill = float(np.median(observed.numpy()))
        train_X[:, j] = ch.where(ch.isnan(col), ch.full_like(col, fill), col)
        test_col = test_X[:, j]
        test_X[:, j] = ch.where(ch.isnan(test_col),
                                ch.full_like(test_col, fill), test_col)
    return ds.replace(train_X=train_X, test_X=test_X,
                      specs=_fit_ranges(ds.specs, train_X))


def normalize(ds):
    """
    Min-max scales every feature to [0, 1] with the ranges recorded in the
    specs (fitted on the training split); test values are clamped. A
    feature whose range is empty becomes the constant 0 and is listed in
    ``ds.degenerate`` (with a warning). Values are rounded to multiples of
    ``2**-53`` so that additive masks recover them exactly. Idempotent.
    """
    if bool(ch.isnan(ds.train_X).any()) or bool(ch.isnan(ds.test_X).any()):
        raise ValueError("dataset has missing values, impute it first")
    train_X, test_X = ds.train_X.clone(), ds.test_X.clone()
    specs, degenerate = [], []
    for j, spec in enumerate(ds.specs):
        lo, hi = spec.observed_min, spec.observed_max
        if hi == lo:
            warnings.warn(f"feature {spec.name} is constant on the train "
                          "split and is mapped to 0")
            train_X[:, j] = 0.0
            test_X[:, j] = 0.0
            degenerate.append(spec.name)
            specs.append(spec.with_range(0.0, 0.0))
            continue
        train_X[:, j] = ((train_X[:, j] - lo) / (hi - lo)).clamp(0.0, 1.0)
        test_X[:, j] = ((test_X[:, j] - lo) / (hi - lo)).clamp(0.0, 1.0)
        specs.append(spec.with_range(0.0, 1.0))
    # on the fixed-point grid of the additive masks
    train_X, test_X = quantize(train_X), quantize(test_X)
    return ds.replace(train_X=train_X, test_X=test_X, specs=specs,
                      degenerate=degenerate)


def prepare(path, schema, seed, schema_path=None):
    """:func:`load_csv`, then :func:`impute`, then :func:`normalize`."""
    return normalize(impute(load_csv(path, schema, seed, schema_path)))


def feature_report(ds):
    """One row per feature: kind, levels, fitted range, degenerate flag."""
    rows = []
    for j, spec in enumerate(ds.specs):
        rows.append({
            'feature': spec.name,
            'kind': spec.kind,
            'categories': '|'.join(spec.categories or []),
            'observed_min': spec.observed_min,
            'observed_max': spec.observed_max,
            'missing_train': int(ch.isnan(ds.train_X[:, j]).sum()),
            'missing_test': int(ch.isnan(ds.test_X[:, j]).sum()),
            'degenerate': spec.name in ds.degenerate,
        })
    return pd.DataFrame(rows)
