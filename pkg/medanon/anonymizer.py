"""
This module houses the anonymizer networks and the
:class:`~medanon.anonymizer.AnonymizerModel` wrapper that serves them.

An anonymizer is an encoder, trained jointly with a discriminator, that
turns a record ``x`` and a mask ``r`` into a synthetic record ``x_hat`` of
the same width. Training records the per-channel variance of every encoder
layer; at inference Gaussian noise with that variance (scaled by
``delta / 0.3``) is added to one encoder layer per record, so the same
record never maps to the same output twice. Training injects the same
noise by default, which teaches the encoder to keep ``x_hat`` close to
``x`` in spite of it.

The encoder takes ``x`` and ``r`` either concatenated (``fusion='concat'``,
input width ``2n``) or already combined by
:func:`~medanon.masks.mask_combine` (``fusion='premask'``, width ``n``).

**Note**: models should be called through :func:`anonymize` (or an
:class:`AnonymizationSession`) rather than through ``forward``, which
expects an explicit mask and noise generator.
"""

import torch as ch
from torch import nn

from .layers import (Activation, BatchNorm, Conv1d, Dense, Network,
                     VarianceStore, binary_cross_entropy)
from .masks import MASKS, mask_combine, prng_mask
from .tools import constants
from .tools.helpers import ShapeError, as_tensor, stream_seed

FUSIONS = ['concat', 'premask']

# (filters, filter length) of the seven conv blocks
ENCODER_FILTERS = [(64, 4), (32, 2), (16, 2), (8, 2), (16, 2), (32, 2), (64, 4)]

DISCRIMINATOR_WIDTHS = [32, 16]


def parse_injection(policy):
    """
    Parses an injection policy: ``'off'``, ``'random'`` or ``'layer:<i>'``
    (``i`` from 1 to 7). Returns ``(kind, index)``.
    """
    if policy in ('off', 'random'):
        return policy, None
    if isinstance(policy, str) and policy.startswith('layer:'):
        try:
            index = int(policy.split(':', 1)[1])
        except ValueError:
            index = None
        if index is not None and 1 <= index <= constants.NUM_ENCODER_LAYERS:
            return 'layer', index
    raise ValueError(f"injection policy must be 'off', 'random' or "
                     f"'layer:<1..{constants.NUM_ENCODER_LAYERS}>', got {policy}")


class PrivacyConfig(object):
    '''
    Hyperparameters of an anonymizer.

    Args:
        lambda_e (float) : weight of the distance term (higher keeps
            ``x_hat`` closer to ``x``)
        lambda_d (float) : weight of the discriminator and target terms
        delta (float) : privacy knob; scales the injected noise
        mask_mode (str) : 'xor_bitwise' or 'uniform_additive'
        injection (str) : 'off', 'random' or 'layer:<i>'
        fusion (str) : 'concat' or 'premask'
        seed (int) : training seed, also the mask key ``k``
    '''
    FIELDS = ['lambda_e', 'lambda_d', 'delta', 'mask_mode', 'injection',
              'fusion', 'seed']

    def __init__(self, lambda_e=0.5, lambda_d=0.5, delta=0.3,
                 mask_mode='uniform_additive', injection='random',
                 fusion='concat', seed=0):
        if lambda_e < 0 or lambda_d < 0:
            raise ValueError("lambda_e and lambda_d must be non-negative")
        if lambda_e + lambda_d == 0:
            raise ValueError("lambda_e and lambda_d cannot both be zero")
        if delta < 0:
            raise ValueError(f"delta must be non-negative, got {delta}")
        if mask_mode not in MASKS:
            raise ValueError(f"mask mode must be one of {list(MASKS)}")
        if fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}")
        parse_injection(injection)
        self.lambda_e, self.lambda_d = float(lambda_e), float(lambda_d)
        self.delta = float(delta)
        self.mask_mode, self.injection, self.fusion = mask_mode, injection, fusion
        self.seed = int(seed)

    def as_dict(self):
        return {k: getattr(self, k) for k in self.FIELDS}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in cls.FIELDS if k in d})

    def replace(self, **kwargs):
        return PrivacyConfig(**{**self.as_dict(), **kwargs})

    def __eq__(self, other):
        return isinstance(other, PrivacyConfig) and \
            self.as_dict() == other.as_dict()

    def __repr__(self):
        return f"PrivacyConfig({self.as_dict()})"


class Encoder(nn.Module):
    '''
    Seven conv1d + batchnorm + tanh blocks over the fused input (one input
    channel), then a dense projection to ``n`` features and a ReLU clamped
    at 1. The tanh outputs are the tapped layers ``layer1..layer7``.

    The final activation passes gradients straight through whenever they
    point back into [0, 1], so a saturated output is still pulled towards
    the record by the distance term.
    '''
    def __init__(self, n, fusion='concat'):
        super(Encoder, self).__init__()
        self.n, self.fusion = n, fusion
        self.in_width = 2 * n if fusion == 'concat' else n
        layers, taps, channels = [], {}, 1
        for i, (filters, length) in enumerate(ENCODER_FILTERS):
            layers += [Conv1d(channels, filters, length), BatchNorm(filters),
                       Activation('tanh')]
            taps[len(layers) - 1] = f'layer{i + 1}'
            channels = filters
        self.features = Network(*layers, taps=taps)
        self.projection = Network(Dense(channels * self.in_width, n),
                                  Activation('bounded_relu'))

    @property
    def layer_names(self):
        return self.features.tap_names

    def reset_parameters(self, generator=None):
        self.features.reset_parameters(generator)
        self.projection.reset_parameters(generator)
        # outputs start in the middle of the record range
        with ch.no_grad():
            self.projection[0].bias.fill_(0.5)

    def forward(self, inp, record_variance=False, store=None, inject=None,
                noise_scale=1.0, generator=None, step=None):
        if inp.dim() != 2 or inp.shape[1] != self.in_width:
            raise ShapeError(f"encoder expects input width {self.in_width}, "
                             f"got shape {tuple(inp.shape)}")
        h = self.features(inp.unsqueeze(1), record_variance=record_variance,
                          store=store, inject=inject, noise_scale=noise_scale,
                          generator=generator, step=step)
        return self.projection(h.reshape(h.shape[0], -1), step=step)


class Discriminator(nn.Module):
    '''
    Scores records as real (close to 1) or synthetic (close to 0).
    '''
    def __init__(self, n):
        super(Discriminator, self).__init__()
        layers, width = [], n
        for w in DISCRIMINATOR_WIDTHS:
            layers += [Dense(width, w), Activation('tanh')]
            width = w
        layers += [Dense(width, 1), Activation('sigmoid')]
        self.network = Network(*layers)

    def reset_parameters(self, generator=None):
        self.network.reset_parameters(generator)

    def forward(self, x, step=None):
        return self.network(x, step=step).view(-1)


class AnonymizerModel(nn.Module):
    """
    Wrapper holding the encoder, the discriminator, the training-time
    :class:`~medanon.layers.VarianceStore` and the
    :class:`PrivacyConfig` the model was trained with.
    """
    def __init__(self, n, config=None):
        super(AnonymizerModel, self).__init__()
        self.n = n
        self.config = config if config is not None else PrivacyConfig()
        self.encoder = Encoder(n, self.config.fusion)
        self.discriminator = Discriminator(n)
        self.variance_store = VarianceStore()
        self.training_log = None
        self.metadata = {}

    @property
    def layer_names(self):
        return self.encoder.layer_names

    def reset_parameters(self, seed=0):
        generator = ch.Generator().manual_seed(int(seed))
        self.encoder.reset_parameters(generator)
        self.discriminator.reset_parameters(generator)
        return self

    def topology(self):
        return {'n': self.n, 'fusion': self.config.fusion,
                'encoder_filters': [list(f) for f in ENCODER_FILTERS],
                'discriminator_widths': list(DISCRIMINATOR_WIDTHS)}

    def encoder_input(self, x, r):
        if x.shape != r.shape or x.shape[-1] != self.n:
            raise ShapeError(f"record {tuple(x.shape)} and mask "
                             f"{tuple(r.shape)} must both have width {self.n}")
        if self.config.fusion == 'concat':
            return ch.cat([x, r], dim=-1)
        return mask_combine(x, r, self.config.mask_mode)

    def forward(self, x, r, record_variance=False, inject=None,
                noise_scale=1.0, generator=None, step=None):
        """
        Args:
            x (ch.tensor) : records, ``(batch, n)``
            r (ch.tensor) : masks, same shape as ``x``
            record_variance (bool) : record the tapped activations into the
                model's variance store
            inject (str|None) : encoder layer name receiving noise
            noise_scale (float) : multiplier of the stored standard deviation
            generator (ch.Generator) : source of the injected noise
            step (int|None) : training step, used in error messages
        """
        return self.encoder(self.encoder_input(x, r),
                            record_variance=record_variance,
                            store=self.variance_store, inject=inject,
                            noise_scale=noise_scale, generator=generator,
                            step=step)


def noise_scale(delta):
    return float(delta) / constants.REFERENCE_DELTA


def draw_layers(names, policy, batch, generator=None):
    """
    The encoder layer(s) receiving noise under ``policy``: None for
    'off', one name for 'layer:<i>', and one independently drawn name
    per record for 'random'.
    """
    kind, index = parse_injection(policy)
    if kind == 'off':
        return None
    if kind == 'layer':
        return names[index - 1]
    picks = ch.randint(len(names), (batch,), generator=generator)
    return [names[int(i)] for i in picks]


def _choose_layers(model, policy, batch, generator):
    if parse_injection(policy)[0] != 'off' and model.variance_store.is_empty():
        raise ValueError("variance injection requested but the model's "
                         "variance store is empty")
    return draw_layers(model.layer_names, policy, batch, generator)


def encoder_forward(model, x, r, delta=None, injection='off', generator=None):
    """
    Runs the encoder on records ``x`` with masks ``r`` (a single record or
    a batch). With ``injection='off'`` the output is a deterministic
    function of ``(x, r)``. Entries of the output lie in [0, 1].
    """
    x, r = as_tensor(x), as_tensor(r)
    single = x.dim() == 1
    if single:
        x, r = x.view(1, -1), r.view(1, -1)
    delta = model.config.delta if delta is None else delta
    layers = _choose_layers(model, injection, x.shape[0], generator)
    x_hat = model(x, r, inject=layers, noise_scale=noise_scale(delta),
                  generator=generator)
    return x_hat[0] if single else x_hat


def encoder_loss_terms(x, x_hat, d1_out, d2_loss, cfg):
    """
    The terms of the encoder loss: mean Euclidean distance between ``x``
    and ``x_hat``, the discriminator term evaluated with label "real" on
    ``x_hat``, the target term, and their weighted sum ``loss``.
    """
    distance = ch.linalg.vector_norm(x - x_hat, dim=-1).mean()
    fool = binary_cross_entropy(as_tensor(d1_out), 1.0)
    d2_loss = as_tensor(d2_loss)
    loss = cfg.lambda_e * (distance + cfg.delta) + \
        cfg.lambda_d * (fool + d2_loss)
    return {'loss': loss, 'distance': distance, 'fool': fool,
            'target': d2_loss}


def loss_encoder(x, x_hat, d1_out, d2_loss, cfg):
    """
    ``lambda_e * (||x - x_hat|| + delta) + lambda_d * (L_fool + d2_loss)``,
    where ``L_fool`` is the cross-entropy of the discriminator output on
    ``x_hat`` against the label "real".
    """
    return encoder_loss_terms(x, x_hat, d1_out, d2_loss, cfg)['loss']


def loss_discriminator(d1_on_x, d1_on_xhat):
    """
    ``-log(d1_on_x) - log(1 - d1_on_xhat)`` averaged over the batch, with
    probabilities clamped to ``[1e-7, 1 - 1e-7]``.
    """
    a = as_tensor(d1_on_x).clamp(constants.PROB_EPS, 1 - constants.PROB_EPS)
    b = as_tensor(d1_on_xhat).clamp(constants.PROB_EPS, 1 - constants.PROB_EPS)
    return (-ch.log(a)).mean() + (-ch.log(1 - b)).mean()


def anonymize(model, x, session_seed, counter=0, delta=None, injection=None):
    """
    Anonymizes one record or a batch of records.

    The mask is mask number ``counter`` under key ``session_seed``; the
    injection noise (and, under the 'random' policy, each record's layer) is
    drawn from a generator derived from the same pair, so a call is a pure
    function of its arguments.

    Args:
        model (AnonymizerModel) : trained model
        x (array-like) : ``(n,)`` or ``(batch, n)`` records in [0, 1]
        session_seed (int) : mask key of the session
        counter (int) : position of the call within the session
        delta (float|None) : noise knob, defaults to the training config's
        injection (str|None) : policy override, defaults to the config's

    Returns:
        The anonymized record(s), shaped like ``x``. The model is only
        read, so one model can serve concurrent calls; it must be in eval
        mode.
    """
    if model.training:
        raise ValueError("anonymize needs a model in eval mode")
    x = as_tensor(x)
    single = x.dim() == 1
    batch = x.view(1, -1) if single else x
    if batch.shape[-1] != model.n:
        raise ShapeError(f"record width {batch.shape[-1]} does not match the "
                         f"model's {model.n}")
    policy = model.config.injection if injection is None else injection
    r = prng_mask(session_seed, model.n, model.config.mask_mode, counter,
                  batch=batch.shape[0])
    generator = ch.Generator().manual_seed(stream_seed(session_seed, counter))
    with ch.no_grad():
        x_hat = encoder_forward(model, batch, r, delta, policy, generator)
    return x_hat[0] if single else x_hat


class AnonymizationSession(object):
    '''
    A sequence of :func:`anonymize` calls sharing ``session_seed``; each
    call uses the next counter value, so repeated calls on the same record
    draw fresh masks and fresh noise while the whole session stays
    reproducible.
    '''
    def __init__(self, model, session_seed, delta=None, injection=None):
        self.model, self.session_seed = model, int(session_seed)
        self.delta, self.injection = delta, injection
        self.counter = 0

    def anonymize(self, x):
        x_hat = anonymize(self.model, x, self.session_seed, self.counter,
                          self.delta, self.injection)
        self.counter += 1
        return x_hat
