"""
The pre-trained diagnostic model whose predictions anonymized records must
preserve. Two architectures are available: a logistic regression and a
small tanh MLP; both end in a sigmoid, so scores are probabilities of the
positive class.
"""

import torch as ch
from torch import nn

from .layers import Activation, Dense, Network, binary_cross_entropy
from .tools.helpers import ShapeError, as_tensor


def logistic(n):
    return Network(Dense(n, 1), Activation('sigmoid'))


def mlp(n, hidden=(16, 8)):
    layers, width = [], n
    for h in hidden:
        layers += [Dense(width, h), Activation('tanh')]
        width = h
    layers += [Dense(width, 1), Activation('sigmoid')]
    return Network(*layers)


ARCHITECTURES = {
    'logistic': logistic,
    'mlp': mlp,
}


class TargetModel(nn.Module):
    '''
    Wrapper of a scoring network. ``metadata`` carries what is known about
    how the model was obtained (dataset, seed, held-out accuracy and AUC).
    '''
    def __init__(self, kind, n, threshold=0.5, metadata=None):
        super(TargetModel, self).__init__()
        if kind not in ARCHITECTURES:
            raise ValueError(f"target kind must be one of "
                             f"{list(ARCHITECTURES)}, got {kind}")
        self.kind, self.n, self.threshold = kind, n, threshold
        self.metadata = dict(metadata or {})
        self.network = ARCHITECTURES[kind](n)

    def reset_parameters(self, generator=None):
        self.network.reset_parameters(generator)
        return self

    def topology(self):
        return {'kind': self.kind, 'n': self.n, 'threshold': self.threshold}

    def freeze(self):
        self.requires_grad_(False)
        return self.eval()

    def forward(self, x):
        if x.dim() != 2 or x.shape[1] != self.n:
            raise ShapeError(f"target model expects width {self.n}, got "
                             f"shape {tuple(x.shape)}")
        return self.network(x).view(-1)


def make_target(kind, n, seed=0, threshold=0.5):
    """Builds a target model with parameters drawn from ``seed``."""
    generator = ch.Generator().manual_seed(int(seed))
    return TargetModel(kind, n, threshold).reset_parameters(generator)


def score(model, x):
    """
    Probability of the positive class for one record (returns a float) or a
    batch of records (returns a tensor of shape ``(batch,)``).
    """
    x = as_tensor(x)
    single = x.dim() == 1
    if x.shape[-1] != model.n:
        raise ShapeError(f"record width {x.shape[-1]} does not match the "
                         f"target model's {model.n}")
    with ch.no_grad():
        s = model(x.view(1, -1) if single else x)
    return float(s[0]) if single else s


def predict(model, x):
    s = score(model, x)
    if isinstance(s, float):
        return int(s >= model.threshold)
    return (s >= model.threshold).to(s.dtype)


def target_loss(model, x_hat, y_ref):
    """
    Cross-entropy between the target's score of ``x_hat`` and the reference
    labels ``y_ref`` (the target's own predictions on the original records
    during anonymizer training). Differentiable in ``x_hat``.
    """
    return binary_cross_entropy(model(x_hat), as_tensor(y_ref).view(-1))
