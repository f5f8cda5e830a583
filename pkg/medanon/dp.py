"""
The Laplace mechanism used as the differential-privacy baseline: every
feature ``i`` of a record gets independent ``Laplace(0, S_i / delta)``
noise, where ``S_i`` is the feature's sensitivity. Outputs are not clamped.
"""

import numpy as np

from .tools.helpers import ShapeError, as_numpy, as_tensor

# Largest magnitude of the centred uniform used by the inverse CDF; keeps
# log1p away from -1.
_U_MAX = np.nextafter(0.5, 0.0)


def estimate_sensitivity(ds):
    """
    Per-feature sensitivity: the range of each feature over the training
    split (1 for a normalized non-constant feature, 0 for a constant one).
    """
    X = as_numpy(ds.train_X)
    return X.max(axis=0) - X.min(axis=0)


def laplace_noise(scale, seed=None, size=None, rng=None):
    """
    Draws from ``Laplace(0, scale)`` by inverting the CDF of a uniform
    draw. ``scale`` may be an array (one scale per feature); a zero scale
    gives exactly zero.

    Args:
        scale (float|array) : Laplace scale ``b >= 0``
        seed (int) : seed of a fresh generator (ignored if ``rng`` is given)
        size (int|tuple|None) : output shape; ``None`` means the shape of
            ``scale`` (a float for a scalar scale)
        rng (np.random.Generator) : generator to draw from

    Returns:
        A float or a float64 array.
    """
    b = np.asarray(scale, dtype=np.float64)
    if np.any(b < 0) or not np.all(np.isfinite(b)):
        raise ValueError("Laplace scale must be finite and non-negative")
    rng = np.random.default_rng(seed) if rng is None else rng
    shape = b.shape if size is None else size
    u = np.clip(rng.random(shape) - 0.5, -_U_MAX, _U_MAX)
    noise = -b * np.sign(u) * np.log1p(-2 * np.abs(u))
    noise = np.where(b > 0, noise, 0.0)
    if size is None and b.ndim == 0:
        return float(noise)
    return noise


class DpConfig(object):
    '''
    Parameters of the Laplace mechanism.

    Args:
        delta (float) : privacy parameter (larger means less noise)
        sensitivity (array) : per-feature sensitivities ``S_i >= 0``
        seed (int) : seed of the noise
    '''
    def __init__(self, delta, sensitivity, seed=0):
        if not delta > 0:
            raise ValueError(f"delta must be positive, got {delta}")
        sensitivity = np.asarray(sensitivity, dtype=np.float64).ravel()
        if np.any(sensitivity < 0):
            raise ValueError("sensitivities must be non-negative")
        self.delta, self.sensitivity, self.seed = float(delta), sensitivity, seed
        if not np.all(np.isfinite(self.scales)):
            raise ValueError("noise scales S_i / delta must be finite")

    @property
    def scales(self):
        return self.sensitivity / self.delta

    def replace(self, **kwargs):
        d = {'delta': self.delta, 'sensitivity': self.sensitivity,
             'seed': self.seed}
        d.update(kwargs)
        return DpConfig(**d)


def dp_anonymize(x, cfg, rng=None):
    """
    ``x_i + Laplace(0, S_i / delta)`` for every feature of one record
    (``(n,)``) or of a batch (``(batch, n)``).

    Args:
        x (array-like) : record(s)
        cfg (DpConfig) : mechanism parameters; ``cfg.seed`` seeds the noise
            unless ``rng`` is given
        rng (np.random.Generator) : optional generator to draw from

    Returns:
        A float64 tensor shaped like ``x``.
    """
    x = as_tensor(x)
    if x.shape[-1] != cfg.sensitivity.size:
        raise ShapeError(f"record width {x.shape[-1]} does not match "
                         f"{cfg.sensitivity.size} sensitivities")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    scales = np.broadcast_to(cfg.scales, tuple(x.shape))
    noise = laplace_noise(scales, rng=rng)
    return x + as_tensor(noise)
