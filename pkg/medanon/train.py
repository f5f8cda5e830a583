import os
import time
import warnings

import numpy as np
import torch as ch

from .anonymizer import (AnonymizerModel, draw_layers, encoder_loss_terms,
                         loss_discriminator, noise_scale)
from .layers import binary_cross_entropy
from .masks import MaskGenerator
from .model_utils import fingerprint
from .optim import Adam
from .target_models import make_target, target_loss
from .tools import constants as consts
from .tools.helpers import (AverageMeter, DegenerateLabelError,
                            FrozenModelError, accuracy, auc, check_finite,
                            derive_seeds, ensure_table)

if int(os.environ.get("NOTEBOOK_MODE", 0)) == 1:
    from tqdm import tqdm_notebook as tqdm
else:
    from tqdm import tqdm as tqdm


def eval_target(model, X, y):
    """
    Accuracy and AUC of a target model on ``(X, y)``. The AUC is NaN (with
    a warning) when ``y`` holds a single class.
    """
    with ch.no_grad():
        scores = model(X)
    try:
        test_auc = auc(scores, y)
    except DegenerateLabelError:
        warnings.warn('AUC undefined: a single class in the evaluation labels')
        test_auc = float('nan')
    return accuracy(scores, y, model.threshold), test_auc


def train_target(ds, kind='mlp', *, epochs=200, lr=0.01, batch_size=32,
                 seed=0, store=None):
    """
    Trains the target (diagnostic) model on the training split of a
    normalized dataset with mini-batch Adam on the cross-entropy loss, then
    freezes it.

    Args:
        ds (TabularDataset) : normalized dataset with labels
        kind ('logistic'|'mlp') : architecture
        epochs (int) : passes over the training split
        lr (float) : Adam learning rate
        batch_size (int) : mini-batch size
        seed (int) : seeds the initialization and the batch order
        store (cox.Store) : if given, per-epoch rows go to the ``logs``
            table and scalars to its tensorboard writer

    Returns:
        The frozen :class:`~medanon.target_models.TargetModel`; its
        ``metadata`` carries the held-out accuracy and AUC.
    """
    if not ds.has_labels:
        raise ValueError("target training needs a labelled dataset")
    if ch.unique(ds.train_y).numel() < 2:
        raise DegenerateLabelError("training labels contain a single class")
    if not bool(ch.isfinite(ds.train_X).all()):
        raise ValueError("dataset must be imputed and normalized first")

    writer = store.tensorboard if store else None
    if store is not None:
        ensure_table(store, consts.LOGS_TABLE, consts.LOGS_SCHEMA)

    model = make_target(kind, ds.n, seed)
    opt = Adam(model.parameters(), lr=lr, betas=(0.9, 0.999))
    rng = np.random.default_rng(seed)
    X, y = ds.train_X, ds.train_y
    start_time = time.time()

    iterator = tqdm(range(epochs))
    step = 0
    for epoch in iterator:
        model.train()
        losses = AverageMeter()
        order = rng.permutation(X.shape[0])
        for i in range(0, len(order), batch_size):
            idx = ch.from_numpy(order[i:i + batch_size])
            loss = binary_cross_entropy(model(X[idx]), y[idx])
            check_finite(loss, 'target loss', step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.update(loss.item(), len(idx))
            step += 1

        model.eval()
        train_acc, _ = eval_target(model, X, y)
        test_acc, test_auc = eval_target(model, ds.test_X, ds.test_y)
        iterator.set_description(f'Target Epoch:{epoch} | Loss {losses.avg:.4f}'
                                 f' | Acc {train_acc:.3f} ||')
        log_info = {
            'epoch': epoch,
            'train_loss': losses.avg,
            'train_acc': train_acc,
            'test_acc': test_acc,
            'test_auc': test_auc,
            'time': time.time() - start_time
        }
        if store is not None:
            store[consts.LOGS_TABLE].append_row(log_info)
        if writer is not None:
            for k in ['train_loss', 'train_acc', 'test_acc', 'test_auc']:
                writer.add_scalar(f'target_{k}', log_info[k], epoch)

    if not np.isfinite(log_info['train_loss']):
        raise FloatingPointError("target training ended with a non-finite loss")
    model.metadata = {'dataset': ds.ds_name, 'seed': seed, 'epochs': epochs,
                      'train_loss': log_info['train_loss'],
                      'train_accuracy': train_acc,
                      'test_accuracy': test_acc, 'test_auc': test_auc}
    print(f"=> Trained {kind} target: test accuracy {test_acc:.4f}, "
          f"test AUC {test_auc:.4f}")
    return model.freeze()


def train_anonymizer(ds, target, cfg, steps=50000, batch_size=10, *,
                     lr=0.001, betas=(0.5, 0.999), inject_noise=True,
                     log_iters=100, store=None):
    """
    Adversarial training of an anonymizer against a frozen target model.

    Every step draws a mini-batch of training records and a fresh mask per
    record (mask number ``step`` of key ``cfg.seed``), runs the encoder once
    (recording layer variances), then takes a discriminator Adam step and an
    encoder Adam step. With ``inject_noise`` that encoder pass already adds
    variance noise to the layers drawn by ``cfg.injection`` (scaled by
    ``cfg.delta``), so the distance term is paid on noisy outputs.

    Args:
        ds (TabularDataset) : normalized dataset
        target (TargetModel) : frozen target model; any change to its
            parameters during training raises :class:`FrozenModelError`
        cfg (PrivacyConfig) : loss weights, mask mode, fusion and seed
        steps (int) : number of training steps
        batch_size (int) : records per step, at least 2 (batch norm)
        lr (float) : Adam learning rate of both networks
        betas (tuple) : Adam moment decays
        inject_noise (bool) : inject variance noise during training
        log_iters (int) : how often (in steps) rows go to the cox store
        store (cox.Store) : optional run store

    Returns:
        The trained :class:`~medanon.anonymizer.AnonymizerModel`, in eval
        mode, with its per-step ``training_log`` (columns
        ``constants.TRAIN_LOG_COLUMNS``).
    """
    if batch_size < 2:
        raise ValueError("batch_size must be at least 2")
    if steps < 1:
        raise ValueError("steps must be at least 1")
    X = ds.train_X
    if not bool(ch.isfinite(X).all()):
        raise ValueError("dataset must be imputed and normalized first")
    if X.shape[1] != target.n:
        raise ValueError(f"dataset width {X.shape[1]} does not match the "
                         f"target model's {target.n}")

    writer = store.tensorboard if store else None
    if store is not None:
        ensure_table(store, consts.ANONYMIZER_LOGS_TABLE,
                     consts.ANONYMIZER_LOGS_SCHEMA)

    target.freeze()
    target_print = fingerprint(target)
    init_seed, batch_seed, noise_seed = derive_seeds(cfg.seed, 3)
    model = AnonymizerModel(ds.n, cfg).reset_parameters(init_seed)
    enc_opt = Adam(model.encoder.parameters(), lr=lr, betas=betas)
    disc_opt = Adam(model.discriminator.parameters(), lr=lr, betas=betas)
    masks = MaskGenerator(cfg.seed, cfg.mask_mode)
    rng = np.random.default_rng(batch_seed)
    noise = ch.Generator().manual_seed(noise_seed)
    policy = cfg.injection if inject_noise else 'off'
    replace = X.shape[0] < batch_size

    log = np.zeros((steps, len(consts.TRAIN_LOG_COLUMNS)))
    start_time = time.time()
    model.train()
    iterator = tqdm(range(steps))
    for step in iterator:
        idx = ch.from_numpy(rng.choice(X.shape[0], batch_size, replace=replace))
        x = X[idx]
        r = masks(ds.n, batch=batch_size)
        layers = draw_layers(model.layer_names, policy, batch_size, noise)
        x_hat = model(x, r, record_variance=True, inject=layers,
                      noise_scale=noise_scale(cfg.delta), generator=noise,
                      step=step)

        # discriminator step
        d_real = model.discriminator(x, step=step)
        d_fake = model.discriminator(x_hat.detach(), step=step)
        loss_disc = loss_discriminator(d_real, d_fake)
        check_finite(loss_disc, 'discriminator loss', step)
        disc_opt.zero_grad()
        loss_disc.backward()
        disc_opt.step()

        # encoder step
        with ch.no_grad():
            y_ref = target(x)
        terms = encoder_loss_terms(x, x_hat, model.discriminator(x_hat, step=step),
                                   target_loss(target, x_hat, y_ref), cfg)
        check_finite(terms['loss'], 'encoder loss', step)
        enc_opt.zero_grad()
        terms['loss'].backward()
        enc_opt.step()

        log[step] = [step, terms['loss'].item(), loss_disc.item(),
                     terms['fool'].item(), terms['target'].item(),
                     terms['distance'].item(), d_real.mean().item(),
                     d_fake.mean().item()]

        if step % log_iters == 0 or step == steps - 1:
            if fingerprint(target) != target_print:
                raise FrozenModelError(f"target model changed at step {step}")
            row = dict(zip(consts.TRAIN_LOG_COLUMNS, log[step].tolist()))
            row['step'] = step
            iterator.set_description(
                f"Step:{step} | L_E {row['loss_encoder']:.4f} | "
                f"L_D {row['loss_disc']:.4f} | D(x_hat) {row['disc_fake']:.3f} ||")
            if store is not None:
                row['time'] = time.time() - start_time
                store[consts.ANONYMIZER_LOGS_TABLE].append_row(row)
            if writer is not None:
                for k in consts.TRAIN_LOG_COLUMNS[1:]:
                    writer.add_scalar(k, row[k], step)

    model.training_log = log
    model.metadata = {'dataset': ds.ds_name, 'steps': steps,
                      'batch_size': batch_size, 'lr': lr,
                      'betas': list(betas), 'inject_noise': bool(inject_noise),
                      'target_fingerprint': target_print}
    print(f"=> Trained anonymizer for {steps} steps")
    return model.eval()
