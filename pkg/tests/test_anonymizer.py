import numpy as np
import pytest
import torch as ch

from medanon.anonymizer import (AnonymizationSession, AnonymizerModel,
                                Encoder, PrivacyConfig, anonymize,
                                draw_layers, encoder_forward,
                                encoder_loss_terms, loss_discriminator,
                                loss_encoder, parse_injection)
from medanon.masks import prng_mask
from medanon.target_models import target_loss
from medanon.tools.helpers import ShapeError

DT = ch.float64


@pytest.mark.parametrize('policy,parsed', [
    ('off', ('off', None)),
    ('random', ('random', None)),
    ('layer:1', ('layer', 1)),
    ('layer:7', ('layer', 7)),
])
def test_parse_injection(policy, parsed):
    assert parse_injection(policy) == parsed


@pytest.mark.parametrize('policy', ['layer:0', 'layer:8', 'layer:x', 'on', 3])
def test_parse_injection_rejects(policy):
    with pytest.raises(ValueError):
        parse_injection(policy)


def test_privacy_config_validation():
    cfg = PrivacyConfig()
    assert cfg.as_dict() == {'lambda_e': 0.5, 'lambda_d': 0.5, 'delta': 0.3,
                             'mask_mode': 'uniform_additive',
                             'injection': 'random', 'fusion': 'concat',
                             'seed': 0}
    assert PrivacyConfig.from_dict(cfg.as_dict()) == cfg
    assert cfg.replace(delta=0.7).delta == 0.7 and cfg.delta == 0.3
    for bad in [dict(lambda_e=-1), dict(lambda_e=0, lambda_d=0),
                dict(delta=-0.1), dict(mask_mode='rot13'),
                dict(fusion='sum'), dict(injection='layer:9')]:
        with pytest.raises(ValueError):
            PrivacyConfig(**bad)


@pytest.mark.parametrize('fusion,width', [('concat', 8), ('premask', 4)])
def test_encoder_output_shape_and_range(fusion, width):
    enc = Encoder(4, fusion)
    enc.reset_parameters(ch.Generator().manual_seed(0))
    assert enc.in_width == width
    out = enc(ch.rand(6, width, dtype=DT))
    assert out.shape == (6, 4)
    assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0
    assert enc.layer_names == [f'layer{i}' for i in range(1, 8)]
    with pytest.raises(ShapeError):
        enc(ch.rand(6, width + 1, dtype=DT))


def test_encoder_without_injection_is_deterministic(toy_anonymizer):
    x = ch.rand(3, 5, dtype=DT)
    r = prng_mask(1, 5, 'uniform_additive', batch=3)
    with ch.no_grad():
        a = encoder_forward(toy_anonymizer, x, r, injection='off')
        b = encoder_forward(toy_anonymizer, x, r, injection='off')
    assert ch.equal(a, b)
    single = encoder_forward(toy_anonymizer, x[0], r[0], injection='off')
    assert single.shape == (5,)


def test_same_record_never_maps_twice(toy, toy_anonymizer):
    session = AnonymizationSession(toy_anonymizer, session_seed=3)
    x = toy.test_X[0]
    outputs = np.stack([session.anonymize(x).numpy() for _ in range(100)])
    assert session.counter == 100
    assert len(np.unique(outputs, axis=0)) == 100
    assert outputs.min() >= 0.0 and outputs.max() <= 1.0


def test_anonymize_is_a_function_of_seed_and_counter(toy, toy_anonymizer):
    x = toy.test_X[:4]
    a = anonymize(toy_anonymizer, x, 9, counter=2)
    assert ch.equal(a, anonymize(toy_anonymizer, x, 9, counter=2))
    assert not ch.equal(a, anonymize(toy_anonymizer, x, 9, counter=3))
    assert a.shape == x.shape


def test_zero_delta_matches_no_injection(toy, toy_anonymizer):
    x = toy.test_X[:5]
    silent = anonymize(toy_anonymizer, x, 4, delta=0.0)
    off = anonymize(toy_anonymizer, x, 4, injection='off')
    assert ch.equal(silent, off)


@pytest.mark.parametrize('layer', range(1, 8))
def test_every_layer_can_receive_noise(toy, toy_anonymizer, layer):
    x = toy.test_X[:5]
    noisy = anonymize(toy_anonymizer, x, 4, injection=f'layer:{layer}',
                      delta=3.0)
    off = anonymize(toy_anonymizer, x, 4, injection='off')
    assert not ch.equal(noisy, off)
    assert float(noisy.min()) >= 0.0 and float(noisy.max()) <= 1.0


def test_injection_needs_recorded_variances():
    model = AnonymizerModel(5).reset_parameters(0).eval()
    x = ch.rand(5, dtype=DT)
    with pytest.raises(ValueError, match='variance store is empty'):
        anonymize(model, x, 0, injection='random')
    assert anonymize(model, x, 0, injection='off').shape == (5,)


def test_anonymize_checks_width(toy_anonymizer):
    with pytest.raises(ShapeError):
        anonymize(toy_anonymizer, np.zeros(6), 0)


def test_fresh_encoder_starts_inside_the_record_range():
    enc = Encoder(6)
    enc.reset_parameters(ch.Generator().manual_seed(0))
    enc.eval()
    with ch.no_grad():
        out = enc(ch.rand(200, 12, generator=ch.Generator().manual_seed(1),
                          dtype=DT))
    inside = ((out > 0) & (out < 1)).to(DT).mean()
    assert float(inside) > 0.5


def test_random_policy_draws_a_layer_per_record():
    names = [f'layer{i}' for i in range(1, 8)]
    g = ch.Generator().manual_seed(0)
    drawn = draw_layers(names, 'random', 500, g)
    assert len(drawn) == 500 and set(drawn) == set(names)
    again = draw_layers(names, 'random', 500, ch.Generator().manual_seed(0))
    assert drawn == again
    assert draw_layers(names, 'layer:3', 500) == 'layer3'
    assert draw_layers(names, 'off', 500) is None


def test_batch_records_get_independent_layers(toy, toy_anonymizer,
                                              monkeypatch):
    drawn = []

    def recording(*args, **kwargs):
        drawn.append(draw_layers(*args, **kwargs))
        return drawn[-1]

    monkeypatch.setattr('medanon.anonymizer.draw_layers', recording)
    x = toy.test_X[:1].repeat(50, 1)
    out = anonymize(toy_anonymizer, x, 2)
    assert len(drawn) == 1 and len(drawn[0]) == 50
    assert len(set(drawn[0])) > 1
    assert len(np.unique(out.numpy(), axis=0)) == 50


def test_anonymize_leaves_model_mode_alone(toy, toy_anonymizer):
    model = AnonymizerModel(toy.n).reset_parameters(0)
    assert model.training
    with pytest.raises(ValueError, match='eval mode'):
        anonymize(model, toy.test_X[0], 0)
    assert model.training
    assert not toy_anonymizer.training
    anonymize(toy_anonymizer, toy.test_X[0], 0)
    assert not toy_anonymizer.training


@pytest.mark.parametrize('delta', [0.1, 0.3, 1.0])
def test_anonymized_records_differ_from_the_originals(toy, toy_anonymizer,
                                                      delta):
    x = toy.test_X
    x_hat = anonymize(toy_anonymizer, x, 5, delta=delta)
    gap = ch.linalg.vector_norm(x - x_hat, dim=1)
    assert float(gap.mean()) > 0
    assert not bool((gap == 0).any())


def test_loss_discriminator_values():
    perfect = loss_discriminator(ch.ones(3, dtype=DT), ch.zeros(3, dtype=DT))
    assert float(perfect) == pytest.approx(0.0, abs=1e-6)
    half = ch.full((4,), 0.5, dtype=DT)
    assert float(loss_discriminator(half, half)) == pytest.approx(2 * np.log(2))
    assert np.isfinite(float(loss_discriminator(ch.zeros(2, dtype=DT),
                                                ch.ones(2, dtype=DT))))


def test_loss_encoder_formula():
    cfg = PrivacyConfig(lambda_e=0.25, lambda_d=0.75, delta=0.4)
    x = ch.tensor([[0.0, 0.0], [1.0, 1.0]], dtype=DT)
    x_hat = ch.tensor([[0.3, 0.4], [1.0, 1.0]], dtype=DT)
    d1 = ch.full((2,), 0.5, dtype=DT)
    d2 = ch.tensor(0.2, dtype=DT)
    expected = 0.25 * (0.25 + 0.4) + 0.75 * (np.log(2) + 0.2)
    assert float(loss_encoder(x, x_hat, d1, d2, cfg)) == \
        pytest.approx(expected, abs=1e-12)
    terms = encoder_loss_terms(x, x_hat, d1, d2, cfg)
    assert float(terms['distance']) == pytest.approx(0.25)
    assert float(terms['fool']) == pytest.approx(np.log(2))


def test_encoder_loss_reaches_encoder_parameters(toy, toy_target):
    model = AnonymizerModel(toy.n).reset_parameters(1)
    x = toy.train_X[:6]
    r = prng_mask(0, toy.n, 'uniform_additive', batch=6)
    x_hat = model(x, r, record_variance=True)
    with ch.no_grad():
        y_ref = toy_target(x)
    loss = loss_encoder(x, x_hat, model.discriminator(x_hat),
                        target_loss(toy_target, x_hat, y_ref), model.config)
    loss.backward()
    grads = [p.grad for p in model.encoder.parameters()]
    assert all(g is not None for g in grads)
    assert len(model.variance_store) == 7


def test_training_log_decomposes_the_encoder_loss(toy_anonymizer):
    cfg = toy_anonymizer.config
    log = toy_anonymizer.training_log
    cols = ['step', 'loss_encoder', 'loss_disc', 'loss_fool', 'loss_target',
            'distance', 'disc_real', 'disc_fake']
    row = dict(zip(cols, log.T))
    rebuilt = cfg.lambda_e * (row['distance'] + cfg.delta) + \
        cfg.lambda_d * (row['loss_fool'] + row['loss_target'])
    assert np.allclose(rebuilt, row['loss_encoder'], rtol=0, atol=1e-12)


@pytest.mark.parametrize('seed', range(5))
def test_composite_losses_gradcheck(seed):
    g = ch.Generator().manual_seed(seed)
    cfg = PrivacyConfig(lambda_e=0.3, lambda_d=0.7, delta=0.2)
    x = ch.rand(4, 3, generator=g, dtype=DT)
    x_hat = ch.rand(4, 3, generator=g, dtype=DT).requires_grad_()
    d1 = (0.1 + 0.8 * ch.rand(4, generator=g, dtype=DT)).requires_grad_()
    d2 = ch.rand((), generator=g, dtype=DT).requires_grad_()
    assert ch.autograd.gradcheck(
        lambda x_hat, d1, d2: loss_encoder(x, x_hat, d1, d2, cfg),
        (x_hat, d1, d2), rtol=1e-3)
    a = (0.1 + 0.8 * ch.rand(4, generator=g, dtype=DT)).requires_grad_()
    b = (0.1 + 0.8 * ch.rand(4, generator=g, dtype=DT)).requires_grad_()
    assert ch.autograd.gradcheck(loss_discriminator, (a, b), rtol=1e-3)
