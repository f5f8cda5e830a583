import numpy as np
import torch as ch
from scipy.stats import rankdata

from . import constants


class ParseError(ValueError):
    """A CSV row does not parse under the requested schema."""


class EncodingError(ValueError):
    """A categorical value is not one of the known levels."""


class MissingFeatureError(ValueError):
    """A feature has no observed value in the training split."""


class DegenerateLabelError(ValueError):
    """Labels contain a single class where two are required."""


class UndefinedCorrelationError(ValueError):
    """Correlation requested for a zero-variance vector."""


class ShapeError(ValueError):
    """Widths or shapes of two operands disagree."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinite value showed up in an activation or a loss."""


class FrozenModelError(RuntimeError):
    """A model that must stay frozen was modified."""


def has_attr(obj, k):
    """Checks both that obj.k exists and is not equal to None"""
    try:
        return (getattr(obj, k) is not None)
    except KeyError as e:
        return False
    except AttributeError as e:
        return False


def check_finite(t, where, step=None):
    """
    Raise :class:`NonFiniteError` if the tensor ``t`` holds a NaN or an
    infinity. ``where`` names the layer or loss, ``step`` the training step.
    """
    if not bool(ch.isfinite(t).all()):
        at_step = '' if step is None else f' at step {step}'
        raise NonFiniteError(f"non-finite value in {where}{at_step}")
    return t


def as_tensor(x):
    """Converts arrays (or nested lists) to a float64 torch tensor."""
    if isinstance(x, ch.Tensor):
        return x.to(constants.DTYPE)
    return ch.as_tensor(np.asarray(x, dtype=np.float64), dtype=constants.DTYPE)


def as_numpy(x):
    if isinstance(x, ch.Tensor):
        return x.detach().cpu().numpy().astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def derive_seeds(seed, count):
    """
    Derives ``count`` independent 63-bit integer seeds from ``seed``. The
    same ``(seed, count)`` always gives the same list.
    """
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
            for c in children]


def stream_seed(*keys):
    """
    A 63-bit seed determined by a tuple of non-negative integers, e.g.
    ``(session_seed, counter)``. Distinct tuples give unrelated seeds.
    """
    entropy = [int(k) % 2 ** 64 for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0] >> np.uint64(1))


def accuracy(scores, labels, threshold=0.5):
    """
    Computes the fraction of correct decisions, i.e.
    (TP + TN) / (TP + TN + FP + FN), with a case predicted positive when
    its score is at least ``threshold``.

    Args:
        scores (array-like) : scores (or probabilities) of the positive class
        labels (array-like) : true labels in {0, 1}
        threshold (float) : decision threshold

    Returns:
        The accuracy as a float in [0, 1].
    """
    scores, labels = as_numpy(scores).ravel(), as_numpy(labels).ravel()
    if labels.size == 0:
        raise ValueError("accuracy needs at least one label")
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores for {labels.size} labels")
    preds = (scores >= threshold).astype(np.float64)
    return float(np.mean(preds == labels))


def pearson(a, b):
    """
    Two-pass Pearson correlation between two equally long vectors.

    Raises :class:`UndefinedCorrelationError` when either vector has zero
    variance instead of returning NaN.
    """
    a, b = as_numpy(a).ravel(), as_numpy(b).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"lengths differ: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("pearson needs at least two points")
    da = a - a.mean()
    db = b - b.mean()
    saa, sbb = np.dot(da, da), np.dot(db, db)
    if saa == 0 or sbb == 0:
        raise UndefinedCorrelationError("correlation undefined for a "
                                        "zero-variance vector")
    r = np.dot(da, db) / np.sqrt(saa * sbb)
    return float(np.clip(r, -1.0, 1.0))


def auc(scores, labels):
    """
    Area under the ROC curve in its Mann-Whitney form: the probability that
    a random positive outranks a random negative, ties counting 1/2.
    """
    scores, labels = as_numpy(scores).ravel(), as_numpy(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores for {labels.size} labels")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelError("AUC needs both classes")
    ranks = rankdata(scores)  # average ranks for ties
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


class AverageMeter(object):
    """Computes and stores the average and current value"""
    def __init__(self):
        self.reset()

    def reset(self):
        self.val = 0
        self.avg = 0
        self.sum = 0
        self.count = 0

    def update(self, val, n=1):
        self.val = val
        self.sum += val * n
        self.count += n
        self.avg = self.sum / self.count


def ensure_table(store, name, schema):
    """Adds a table to a cox store unless it is already there."""
    if name not in store.tables:
        store.add_table(name, schema)
    return store[name]
