"""
**For most use cases, this can just be considered an internal module.**

One-time-pad style masks. A mask ``r`` is drawn from a counter-based
pseudorandom stream keyed by a seed ``k`` and combined with a record either
bitwise (XOR on features binarized at 0.5) or additively (``(x + r) mod 1``
on a ``2**-53`` fixed-point grid).
Each mask mode is a :class:`MaskMode` subclass registered in :data:`MASKS`.
"""

import numpy as np
import torch as ch

from .tools import constants
from .tools.helpers import ShapeError, as_tensor

KEY_SPACE = 2 ** 128

# fixed-point grid of the additive mode
RESOLUTION = 2 ** 53
MODULUS = RESOLUTION + 1


def mask_stream(k, counter=0):
    """
    The ``numpy`` generator for mask number ``counter`` under key ``k``.
    Different counters give disjoint Philox streams.
    """
    if counter < 0:
        raise ValueError(f"mask counter must be non-negative, got {counter}")
    bit_generator = np.random.Philox(key=int(k) % KEY_SPACE)
    return np.random.Generator(bit_generator.jumped(int(counter)))


class MaskMode:
    '''
    Generic mask mode. Must implement draw, combine and uncombine.
    '''
    name = None

    def draw(self, rng, shape):
        '''
        Draw a mask of the given shape from the numpy generator ``rng``.
        '''
        raise NotImplementedError

    def combine(self, x, r):
        '''
        Combine records ``x`` with masks ``r`` (tensors of equal shape).
        '''
        raise NotImplementedError

    def uncombine(self, v, r):
        '''
        Recover the records from combined vectors ``v`` and masks ``r``.
        '''
        raise NotImplementedError


class XorMask(MaskMode):
    """
    Bitwise mode: masks are uniform bits, records are binarized at 0.5 and
    XOR-ed with the mask. XOR is its own inverse.
    """
    name = 'xor_bitwise'

    def draw(self, rng, shape):
        return rng.integers(0, 2, size=shape).astype(np.float64)

    def combine(self, x, r):
        bits = (x >= 0.5).to(ch.uint8)
        return ch.bitwise_xor(bits, (r >= 0.5).to(ch.uint8)).to(constants.DTYPE)

    def uncombine(self, v, r):
        return self.combine(v, r)


def to_fixed(x):
    """Fixed-point residues ``round(x * 2**53)`` of values in [0, 1]."""
    return ch.round(as_tensor(x) * RESOLUTION).to(ch.int64)


def from_fixed(q):
    return q.to(constants.DTYPE) / RESOLUTION


def quantize(x):
    """
    Rounds values in [0, 1] to the nearest multiple of ``2**-53``. Every
    float64 in [0.5, 1], every ``k / 2**53`` and every value drawn by
    ``numpy``'s ``random`` is left unchanged.
    """
    return from_fixed(to_fixed(x))


class AdditiveMask(MaskMode):
    """
    Continuous mode: masks are uniform reals in [0, 1) and the combination
    is ``(x + r) mod 1``, computed exactly on the ``2**-53`` grid with
    ``2**53 + 1`` residues so that 1 stays distinct from 0. Recovery is
    exact for every record on the grid; other records come back quantized.
    """
    name = 'uniform_additive'

    def draw(self, rng, shape):
        return rng.random(size=shape)

    def combine(self, x, r):
        return from_fixed(ch.remainder(to_fixed(x) + to_fixed(r), MODULUS))

    def uncombine(self, v, r):
        return from_fixed(ch.remainder(to_fixed(v) - to_fixed(r), MODULUS))


MASKS = {
    'xor_bitwise': XorMask,
    'uniform_additive': AdditiveMask,
}


def get_mode(mode):
    if mode not in MASKS:
        raise ValueError(f"mask mode must be one of {list(MASKS)}, got {mode}")
    return MASKS[mode]()


def prng_mask(k, n, mode, counter=0, batch=None):
    """
    Draws mask number ``counter`` under key ``k``.

    Args:
        k (int) : mask key (seed)
        n (int) : record width
        mode (str) : 'xor_bitwise' (uniform bits) or 'uniform_additive'
            (uniform reals in [0, 1))
        counter (int) : position of the mask in the key's sequence
        batch (int|None) : if given, draw ``batch`` masks at once

    Returns:
        A float64 tensor of shape ``(n,)`` or ``(batch, n)``.
    """
    if n < 1:
        raise ValueError(f"mask length must be at least 1, got {n}")
    shape = (n,) if batch is None else (batch, n)
    r = get_mode(mode).draw(mask_stream(k, counter), shape)
    return ch.from_numpy(r).to(constants.DTYPE)


class MaskGenerator(object):
    '''
    The generator F(k): every call returns the next mask of key ``k`` and
    advances the counter, so no mask is ever handed out twice.
    '''
    def __init__(self, k, mode, counter=0):
        get_mode(mode)
        self.k, self.mode, self.counter = int(k), mode, int(counter)

    def __call__(self, n, batch=None):
        r = prng_mask(self.k, n, self.mode, self.counter, batch)
        self.counter += 1
        return r


def _check_widths(x, r):
    if x.shape != r.shape:
        raise ShapeError(f"record shape {tuple(x.shape)} does not match "
                         f"mask shape {tuple(r.shape)}")


def mask_combine(x, r, mode):
    """
    Combines records with masks: XOR of bits for 'xor_bitwise',
    ``(x + r) mod 1`` for 'uniform_additive'. An all-zero mask returns
    ``x`` (binarized in the bitwise mode).
    """
    x, r = as_tensor(x), as_tensor(r)
    _check_widths(x, r)
    return get_mode(mode).combine(x, r)


def mask_uncombine(v, r, mode):
    """Inverse of :func:`mask_combine` for a known mask ``r``."""
    v, r = as_tensor(v), as_tensor(r)
    _check_widths(v, r)
    return get_mode(mode).uncombine(v, r)
