"""
The differentiable building blocks used by every network in the library:
dense, 1-d convolution, batch normalization and activation layers, plus the
:class:`Network` container that runs them in order and the
:class:`VarianceStore` that records per-layer activation variances.

Every layer is a ``torch.autograd.Function`` with a hand-written backward
pass, wrapped in a small ``nn.Module``. Autograd only chains these pieces
together (and the scalar losses on top of them), so

>>> ch.autograd.gradcheck(DenseFunction.apply, (x, w, b))

checks the gradients written here, not torch's own.

Inputs of conv1d and batchnorm layers are ``(batch, channels, width)``;
dense layers and batchnorm also accept ``(batch, width)``.
"""

import math
from collections import OrderedDict

import torch as ch
from torch import nn
import torch.nn.functional as F

from .tools import constants
from .tools.helpers import ShapeError, check_finite

ACTIVATIONS = ['tanh', 'relu', 'sigmoid', 'bounded_relu']


def same_padding(length):
    """Left and right zero padding that keeps the width (stride 1)."""
    left = (length - 1) // 2
    return left, length - 1 - left


def _stat_dims(x):
    return (0,) if x.dim() == 2 else (0, 2)


def _channel_view(t, x):
    return t.view(1, -1) if x.dim() == 2 else t.view(1, -1, 1)


def _injected_rows(inject, name, batch):
    """
    1/0 weights of the records whose noise goes to tap ``name``, or None
    when no record of the batch injects there.
    """
    if inject is None:
        return None
    if isinstance(inject, str):
        return ch.ones(batch, dtype=constants.DTYPE) if inject == name else None
    if len(inject) != batch:
        raise ShapeError(f"{len(inject)} injection layers for a batch of "
                         f"{batch} records")
    rows = ch.tensor([layer == name for layer in inject],
                     dtype=constants.DTYPE)
    return rows if bool(rows.any()) else None


class DenseFunction(ch.autograd.Function):
    @staticmethod
    def forward(ctx, x, weight, bias):
        ctx.save_for_backward(x, weight)
        return x.matmul(weight.t()) + bias

    @staticmethod
    def backward(ctx, grad_out):
        x, weight = ctx.saved_tensors
        grad_x = grad_out.matmul(weight)
        grad_weight = grad_out.t().matmul(x)
        grad_bias = grad_out.sum(0)
        return grad_x, grad_weight, grad_bias


class Conv1dFunction(ch.autograd.Function):
    '''
    Stride 1, "same" zero padding. ``weight`` is
    ``(out_channels, in_channels, length)``.
    '''
    @staticmethod
    def forward(ctx, x, weight, bias):
        length = weight.shape[-1]
        left, right = same_padding(length)
        cols = F.pad(x, (left, right)).unfold(2, length, 1)
        ctx.save_for_backward(x, weight)
        return ch.einsum('nclk,ock->nol', cols, weight) + bias.view(1, -1, 1)

    @staticmethod
    def backward(ctx, grad_out):
        x, weight = ctx.saved_tensors
        length = weight.shape[-1]
        left, right = same_padding(length)
        cols = F.pad(x, (left, right)).unfold(2, length, 1)
        grad_weight = ch.einsum('nol,nclk->ock', grad_out, cols)
        grad_bias = grad_out.sum(dim=(0, 2))
        grad_cols = ch.einsum('nol,ock->nclk', grad_out, weight)
        width = x.shape[-1]
        grad_padded = x.new_zeros(x.shape[0], x.shape[1], width + length - 1)
        for j in range(length):
            grad_padded[:, :, j:j + width] += grad_cols[..., j]
        return grad_padded[:, :, left:left + width], grad_weight, grad_bias


class BatchNormFunction(ch.autograd.Function):
    '''
    Normalizes with the given per-channel ``mean``/``var``. When
    ``batch_stats`` is True these are the statistics of ``x`` itself and the
    backward pass differentiates through them.
    '''
    @staticmethod
    def forward(ctx, x, gamma, beta, mean, var, eps, batch_stats):
        inv_std = 1.0 / ch.sqrt(var + eps)
        x_hat = (x - _channel_view(mean, x)) * _channel_view(inv_std, x)
        ctx.save_for_backward(gamma)
        ctx.x_hat, ctx.inv_std, ctx.batch_stats = x_hat, inv_std, batch_stats
        return _channel_view(gamma, x) * x_hat + _channel_view(beta, x)

    @staticmethod
    def backward(ctx, grad_out):
        gamma, = ctx.saved_tensors
        x_hat, inv_std = ctx.x_hat, ctx.inv_std
        dims = _stat_dims(grad_out)
        grad_gamma = (grad_out * x_hat).sum(dims)
        grad_beta = grad_out.sum(dims)
        dx_hat = grad_out * _channel_view(gamma, grad_out)
        if ctx.batch_stats:
            m = grad_out.numel() / grad_out.shape[1]
            grad_x = _channel_view(inv_std, grad_out) / m * (
                m * dx_hat - dx_hat.sum(dims, keepdim=True)
                - x_hat * (dx_hat * x_hat).sum(dims, keepdim=True))
        else:
            grad_x = dx_hat * _channel_view(inv_std, grad_out)
        return grad_x, grad_gamma, grad_beta, None, None, None, None


class ActivationFunction(ch.autograd.Function):
    @staticmethod
    def forward(ctx, x, kind):
        if kind == 'tanh':
            y = ch.tanh(x)
        elif kind == 'relu':
            y = x.clamp(min=0)
        elif kind == 'sigmoid':
            y = ch.sigmoid(x)
        elif kind == 'bounded_relu':
            y = x.clamp(0.0, 1.0)
        else:
            raise ValueError(f"unknown activation {kind}")
        ctx.kind = kind
        ctx.save_for_backward(x, y)
        return y

    @staticmethod
    def backward(ctx, grad_out):
        x, y = ctx.saved_tensors
        if ctx.kind == 'tanh':
            grad_x = grad_out * (1 - y * y)
        elif ctx.kind == 'relu':
            grad_x = grad_out * (x > 0).to(grad_out.dtype)
        elif ctx.kind == 'bounded_relu':
            # straight through wherever a descent step moves x back into [0, 1]
            keep = ((x > 0) & (x < 1)) | ((x <= 0) & (grad_out < 0)) | \
                ((x >= 1) & (grad_out > 0))
            grad_x = grad_out * keep.to(grad_out.dtype)
        else:
            grad_x = grad_out * y * (1 - y)
        return grad_x, None


def batchnorm_forward(x, gamma, beta, mode, running_mean=None,
                      running_var=None, momentum=0.1, eps=1e-5):
    """
    Batch normalization over the batch (and width) dimension, per channel.

    Args:
        x (ch.tensor) : ``(batch, channels)`` or ``(batch, channels, width)``
        gamma, beta (ch.tensor) : per-channel scale and shift
        mode ('train'|'infer') : 'train' normalizes by the batch statistics
            and updates ``running_mean``/``running_var`` in place (when
            given); 'infer' normalizes by the running statistics
        momentum (float) : weight of the new batch in the running update
        eps (float) : added to the variance before the square root

    Returns:
        The normalized tensor, shaped like ``x``.
    """
    if mode == 'train':
        if x.shape[0] < 2:
            raise ValueError("batch norm in train mode needs a batch of at "
                             "least 2 records")
        dims = _stat_dims(x)
        with ch.no_grad():
            mean = x.mean(dims)
            var = x.var(dims, unbiased=False)
            if running_mean is not None:
                count = x.numel() / x.shape[1]
                running_mean.mul_(1 - momentum).add_(mean, alpha=momentum)
                running_var.mul_(1 - momentum).add_(
                    var * count / max(count - 1, 1), alpha=momentum)
        return BatchNormFunction.apply(x, gamma, beta, mean, var, eps, True)
    elif mode == 'infer':
        return BatchNormFunction.apply(x, gamma, beta, running_mean,
                                       running_var, eps, False)
    raise ValueError(f"mode must be 'train' or 'infer', not {mode}")


def _uniform(shape, bound, generator):
    u = ch.rand(shape, generator=generator, dtype=constants.DTYPE)
    return (2 * u - 1) * bound


class Layer(nn.Module):
    '''
    Base class of the four layer kinds. Subclasses set ``kind`` and may
    override :meth:`reset_parameters` and :meth:`hyperparameters`.
    '''
    kind = None

    def reset_parameters(self, generator=None):
        pass

    def hyperparameters(self):
        return {}

    def describe(self):
        return {'kind': self.kind, **self.hyperparameters()}


class Dense(Layer):
    kind = 'dense'

    def __init__(self, in_features, out_features):
        super(Dense, self).__init__()
        self.in_features, self.out_features = in_features, out_features
        self.weight = nn.Parameter(ch.zeros(out_features, in_features,
                                            dtype=constants.DTYPE))
        self.bias = nn.Parameter(ch.zeros(out_features, dtype=constants.DTYPE))

    def reset_parameters(self, generator=None):
        bound = 1.0 / math.sqrt(self.in_features)
        with ch.no_grad():
            self.weight.copy_(_uniform(self.weight.shape, bound, generator))
            self.bias.copy_(_uniform(self.bias.shape, bound, generator))

    def hyperparameters(self):
        return {'in_features': self.in_features,
                'out_features': self.out_features}

    def forward(self, x):
        if x.dim() != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"dense layer expects width {self.in_features}, "
                             f"got shape {tuple(x.shape)}")
        return DenseFunction.apply(x, self.weight, self.bias)


class Conv1d(Layer):
    kind = 'conv1d'

    def __init__(self, in_channels, out_channels, length):
        super(Conv1d, self).__init__()
        if length < 1:
            raise ValueError("filter length must be at least 1")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.length = length
        self.weight = nn.Parameter(ch.zeros(out_channels, in_channels, length,
                                            dtype=constants.DTYPE))
        self.bias = nn.Parameter(ch.zeros(out_channels, dtype=constants.DTYPE))

    def reset_parameters(self, generator=None):
        bound = 1.0 / math.sqrt(self.in_channels * self.length)
        with ch.no_grad():
            self.weight.copy_(_uniform(self.weight.shape, bound, generator))
            self.bias.copy_(_uniform(self.bias.shape, bound, generator))

    def hyperparameters(self):
        return {'in_channels': self.in_channels,
                'out_channels': self.out_channels,
                'length': self.length, 'stride': 1, 'padding': 'same'}

    def forward(self, x):
        if x.dim() != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(f"conv1d layer expects {self.in_channels} input "
                             f"channels, got shape {tuple(x.shape)}")
        return Conv1dFunction.apply(x, self.weight, self.bias)


class BatchNorm(Layer):
    kind = 'batchnorm'

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super(BatchNorm, self).__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gamma = nn.Parameter(ch.ones(channels, dtype=constants.DTYPE))
        self.beta = nn.Parameter(ch.zeros(channels, dtype=constants.DTYPE))
        self.register_buffer('running_mean',
                             ch.zeros(channels, dtype=constants.DTYPE))
        self.register_buffer('running_var',
                             ch.ones(channels, dtype=constants.DTYPE))

    def hyperparameters(self):
        return {'channels': self.channels, 'momentum': self.momentum,
                'eps': self.eps}

    def forward(self, x):
        if x.shape[1] != self.channels:
            raise ShapeError(f"batchnorm expects {self.channels} channels, "
                             f"got shape {tuple(x.shape)}")
        mode = 'train' if self.training else 'infer'
        return batchnorm_forward(x, self.gamma, self.beta, mode,
                                 self.running_mean, self.running_var,
                                 self.momentum, self.eps)


class Activation(Layer):
    kind = 'activation'

    def __init__(self, name):
        super(Activation, self).__init__()
        if name not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        self.name = name

    def hyperparameters(self):
        return {'name': self.name}

    def forward(self, x):
        return ActivationFunction.apply(x, self.name)


LAYERS = {
    'dense': Dense,
    'conv1d': Conv1d,
    'batchnorm': BatchNorm,
    'activation': Activation,
}


class VarianceStore(object):
    '''
    Running per-channel variance of the activations of named layers,
    merged batch by batch (Chan/Welford update), so the stored value equals
    the two-pass variance of every activation recorded so far. ``steps``
    counts the recorded batches of a layer.
    '''
    def __init__(self):
        self._stats = OrderedDict()

    def update(self, name, activations):
        a = activations.detach()
        flat = a.transpose(0, 1).reshape(a.shape[1], -1)
        count = flat.shape[1]
        mean = flat.mean(1)
        m2 = ((flat - mean.unsqueeze(1)) ** 2).sum(1)
        if name not in self._stats:
            self._stats[name] = {'steps': 1, 'count': count,
                                 'mean': mean, 'm2': m2}
            return
        s = self._stats[name]
        total = s['count'] + count
        delta = mean - s['mean']
        s['mean'] = s['mean'] + delta * count / total
        s['m2'] = s['m2'] + m2 + delta ** 2 * s['count'] * count / total
        s['count'] = total
        s['steps'] += 1

    def variance(self, name):
        if name not in self._stats:
            raise KeyError(f"no variance recorded for layer {name}")
        s = self._stats[name]
        return s['m2'] / s['count']

    def steps(self, name):
        return self._stats[name]['steps'] if name in self._stats else 0

    @property
    def names(self):
        return list(self._stats)

    def is_empty(self):
        return not self._stats

    def __len__(self):
        return len(self._stats)

    def __contains__(self, name):
        return name in self._stats

    def state_dict(self):
        return OrderedDict((k, {'steps': v['steps'], 'count': v['count'],
                                'mean': v['mean'].clone(),
                                'm2': v['m2'].clone()})
                           for k, v in self._stats.items())

    def load_state_dict(self, sd):
        self._stats = OrderedDict((k, dict(v)) for k, v in sd.items())
        return self


class Network(nn.Sequential):
    '''
    Runs its layers in order. ``taps`` maps a layer index to a name; the
    output of a tapped layer can have its variance recorded into a
    :class:`VarianceStore` and can receive Gaussian noise whose standard
    deviation is the stored one (times ``noise_scale``).
    '''
    def __init__(self, *layers, taps=None):
        super(Network, self).__init__(*layers)
        self.taps = dict(taps or {})

    @property
    def tap_names(self):
        return [self.taps[i] for i in sorted(self.taps)]

    def reset_parameters(self, generator=None):
        for layer in self:
            layer.reset_parameters(generator)

    def describe(self):
        return [layer.describe() for layer in self]

    def forward(self, x, record_variance=False, store=None, inject=None,
                noise_scale=1.0, generator=None, step=None):
        """
        Args:
            x (ch.tensor) : input batch
            record_variance (bool) : add this batch's tapped activations to
                ``store``
            store (VarianceStore) : where variances are recorded / read
            inject (str|list|None) : name of the tap that receives noise,
                or one tap name (or None) per record of the batch
            noise_scale (float) : multiplier of the stored standard deviation
            generator (ch.Generator) : source of the injected noise
            step (int|None) : training step, only used in error messages
        """
        if record_variance and store is None:
            raise ValueError("record_variance needs a VarianceStore")
        for i, layer in enumerate(self):
            x = layer(x)
            name = self.taps.get(i, f'{i}:{layer.kind}')
            check_finite(x, f'layer {name}', step)
            if i not in self.taps:
                continue
            if record_variance:
                store.update(name, x)
            rows = _injected_rows(inject, name, x.shape[0])
            if rows is not None:
                std = store.variance(name).sqrt() * noise_scale
                noise = ch.randn(x.shape, generator=generator,
                                 dtype=constants.DTYPE)
                x = x + noise * _channel_view(std, x) * \
                    rows.view(-1, *([1] * (x.dim() - 1)))
        return x


def forward(layers, x, record_variance=False, store=None):
    """
    Runs a list of layers (or a :class:`Network`) on ``x``, recording the
    per-layer activation variances into ``store`` when asked. The autograd
    graph built on the way is the cache consumed by :func:`backward`.
    """
    net = layers if isinstance(layers, Network) else \
        Network(*layers, taps={i: f'{i}:{l.kind}' for i, l in enumerate(layers)})
    return net(x, record_variance=record_variance, store=store)


def backward(output, upstream_grad, params, x=None):
    """
    Back-propagates ``upstream_grad`` from ``output`` (produced by
    :func:`forward`).

    Returns:
        A tuple ``(param_grads, input_grad)``; every gradient is shaped like
        its parameter, ``input_grad`` like ``x`` (``None`` if ``x`` is not
        given or does not require grad).
    """
    if upstream_grad.shape != output.shape:
        raise ShapeError(f"upstream gradient {tuple(upstream_grad.shape)} "
                         f"does not match output {tuple(output.shape)}")
    params = list(params)
    wrt = params + ([x] if x is not None and x.requires_grad else [])
    grads = ch.autograd.grad(output, wrt, grad_outputs=upstream_grad,
                             allow_unused=True, retain_graph=True)
    grads = [ch.zeros_like(t) if g is None else g for t, g in zip(wrt, grads)]
    input_grad = grads[len(params)] if len(grads) > len(params) else None
    return grads[:len(params)], input_grad


def binary_cross_entropy(p, target):
    """
    Mean binary cross-entropy; probabilities are clamped to
    ``[PROB_EPS, 1 - PROB_EPS]`` before the logs.
    """
    target = ch.as_tensor(target, dtype=constants.DTYPE).expand_as(p)
    p = p.clamp(constants.PROB_EPS, 1 - constants.PROB_EPS)
    return -(target * ch.log(p) + (1 - target) * ch.log(1 - p)).mean()
