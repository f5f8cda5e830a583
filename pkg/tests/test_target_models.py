import numpy as np
import pytest
import torch as ch

from medanon.target_models import (ARCHITECTURES, TargetModel, make_target,
                                   predict, score, target_loss)
from medanon.tools.helpers import DegenerateLabelError, ShapeError
from medanon.train import eval_target, train_target

from conftest import make_toy


@pytest.mark.parametrize('kind', list(ARCHITECTURES))
def test_make_target_is_seeded(kind):
    a, b = make_target(kind, 5, seed=1), make_target(kind, 5, seed=1)
    x = ch.rand(7, 5, dtype=ch.float64)
    assert ch.equal(a(x), b(x))
    assert not ch.equal(a(x), make_target(kind, 5, seed=2)(x))
    s = a(x)
    assert s.shape == (7,)
    assert bool(((s > 0) & (s < 1)).all())


def test_score_and_predict_single_and_batch():
    model = make_target('mlp', 4, seed=0)
    x = np.full(4, 0.5)
    s = score(model, x)
    assert isinstance(s, float)
    assert predict(model, x) == int(s >= 0.5)
    batch = score(model, np.tile(x, (3, 1)))
    assert batch.shape == (3,) and float(batch[0]) == s
    with pytest.raises(ShapeError):
        score(model, np.zeros(5))


def test_unknown_architecture():
    with pytest.raises(ValueError):
        TargetModel('svm', 3)


def test_target_loss_is_differentiable_in_records_only():
    model = make_target('logistic', 3, seed=0).freeze()
    x_hat = ch.rand(4, 3, dtype=ch.float64, requires_grad=True)
    loss = target_loss(model, x_hat, ch.tensor([1.0, 0.0, 1.0, 0.0],
                                               dtype=ch.float64))
    loss.backward()
    assert x_hat.grad is not None and bool((x_hat.grad != 0).any())
    assert all(p.grad is None for p in model.parameters())
    assert not any(p.requires_grad for p in model.parameters())


def test_trained_target_is_accurate_and_frozen(toy, toy_target):
    assert toy_target.metadata['test_accuracy'] >= 0.85
    assert toy_target.metadata['test_auc'] >= 0.9
    assert not toy_target.training
    assert not any(p.requires_grad for p in toy_target.parameters())
    acc, roc = eval_target(toy_target, toy.test_X, toy.test_y)
    assert acc == toy_target.metadata['test_accuracy']


def test_train_target_is_reproducible():
    ds = make_toy(n=3, train=60, test=20)
    a = train_target(ds, 'mlp', epochs=3, seed=5)
    b = train_target(ds, 'mlp', epochs=3, seed=5)
    for (k, va), (_, vb) in zip(a.state_dict().items(),
                                b.state_dict().items()):
        assert ch.equal(va, vb), k


def test_train_target_needs_two_classes():
    ds = make_toy(n=3, train=40, test=10)
    with pytest.raises(DegenerateLabelError):
        train_target(ds.replace(train_y=ch.ones(40, dtype=ch.float64)),
                     epochs=1)
    with pytest.raises(ValueError, match='labelled'):
        train_target(ds.replace(train_y=None, test_y=None), epochs=1)


def test_eval_target_warns_on_single_class(toy, toy_target):
    with pytest.warns(UserWarning, match='AUC undefined'):
        _, roc = eval_target(toy_target, toy.test_X,
                             ch.zeros(len(toy.test_X), dtype=ch.float64))
    assert np.isnan(roc)
