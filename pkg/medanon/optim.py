"""
Adam, written out so the update rule is explicit and the state can be
saved alongside a model. :func:`adam_step` is the pure update;
:class:`Adam` wraps it behind the usual ``zero_grad()``/``step()`` interface.
"""

import torch as ch

from .tools.helpers import ShapeError


class AdamState(object):
    '''
    First and second moment estimates of a list of parameters, plus the
    step count used for bias correction.
    '''
    def __init__(self, params, lr=0.001, betas=(0.5, 0.999), eps=1e-8):
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        if not all(0 <= b < 1 for b in betas):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.t = 0
        self.exp_avg = [ch.zeros_like(p) for p in params]
        self.exp_avg_sq = [ch.zeros_like(p) for p in params]

    def state_dict(self):
        return {'lr': self.lr, 'betas': self.betas, 'eps': self.eps,
                't': self.t,
                'exp_avg': [m.clone() for m in self.exp_avg],
                'exp_avg_sq': [v.clone() for v in self.exp_avg_sq]}

    def load_state_dict(self, sd):
        self.lr, self.betas, self.eps = sd['lr'], tuple(sd['betas']), sd['eps']
        self.t = sd['t']
        self.exp_avg = [m.clone() for m in sd['exp_avg']]
        self.exp_avg_sq = [v.clone() for v in sd['exp_avg_sq']]
        return self


def adam_step(params, grads, state):
    """
    One bias-corrected Adam update.

    Args:
        params (list of ch.tensor) : current parameter values
        grads (list of ch.tensor) : gradients, shaped like ``params``
        state (AdamState) : moment estimates, updated in place

    Returns:
        A tuple ``(new_params, state)``; ``params`` themselves are not
        modified. With ``lr = 0`` the new parameters equal the old ones.
    """
    if len(params) != len(grads) or len(params) != len(state.exp_avg):
        raise ShapeError(f"{len(params)} parameters, {len(grads)} gradients, "
                         f"{len(state.exp_avg)} moment slots")
    state.t += 1
    beta1, beta2 = state.betas
    correction1 = 1 - beta1 ** state.t
    correction2 = 1 - beta2 ** state.t
    new_params = []
    with ch.no_grad():
        for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
            if g.shape != p.shape:
                raise ShapeError(f"gradient {tuple(g.shape)} for parameter "
                                 f"{tuple(p.shape)}")
            m.mul_(beta1).add_(g, alpha=1 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
            denom = (v / correction2).sqrt().add_(state.eps)
            new_params.append(p - state.lr * (m / correction1) / denom)
    return new_params, state


class Adam(object):
    '''
    Optimizer over a fixed list of parameters. Parameters without a gradient
    are updated as if their gradient were zero.
    '''
    def __init__(self, params, lr=0.001, betas=(0.5, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(self.params, lr, betas, eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [ch.zeros_like(p) if p.grad is None else p.grad
                 for p in self.params]
        new_params, _ = adam_step([p.detach() for p in self.params], grads,
                                  self.state)
        with ch.no_grad():
            for p, new in zip(self.params, new_params):
                p.copy_(new)

    def state_dict(self):
        return self.state.state_dict()

    def load_state_dict(self, sd):
        self.state.load_state_dict(sd)
