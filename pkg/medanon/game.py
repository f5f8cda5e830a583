"""
The indistinguishability game. In every trial an adversary picks two test
records ``x0`` and ``x1``, the harness flips a fair bit ``b`` and hands
back the anonymized ``x_b``, and the adversary guesses ``b``. The
adversary's advantage is its success rate minus 1/2.

Two *schemes* can be attacked: ``mask_only`` (the mask combination alone,
with a fresh mask per trial) and ``full_model`` (a trained anonymizer,
one anonymization session over the whole game).
"""

import os

import numpy as np
from sklearn.linear_model import LogisticRegression

from .anonymizer import AnonymizationSession
from .masks import MaskGenerator, mask_combine
from .tools import constants as consts
from .tools.helpers import as_numpy, derive_seeds, ensure_table

if int(os.environ.get("NOTEBOOK_MODE", 0)) == 1:
    from tqdm import tqdm_notebook as tqdm
else:
    from tqdm import tqdm


class Scheme(object):
    name = None

    def encrypt(self, x):
        '''Anonymize one record (a 1-d numpy array).'''
        raise NotImplementedError


class MaskOnlyScheme(Scheme):
    name = 'mask_only'

    def __init__(self, mode='uniform_additive', k=0):
        self.mode = mode
        self.masks = MaskGenerator(k, mode)

    def encrypt(self, x):
        return as_numpy(mask_combine(x, self.masks(len(x)), self.mode))


class FullModelScheme(Scheme):
    name = 'full_model'

    def __init__(self, model, session_seed=0):
        self.session = AnonymizationSession(model, session_seed)

    def encrypt(self, x):
        return as_numpy(self.session.anonymize(x))


SCHEMES = {
    'mask_only': MaskOnlyScheme,
    'full_model': FullModelScheme,
}


class Adversary(object):
    '''
    Generic adversary. ``choose`` picks the challenge pair (two distinct
    records of the pool by default) and ``guess`` returns a bit. An
    adversary may ``prepare`` by querying the scheme before the game.
    '''
    name = None
    spy = False

    def prepare(self, scheme, pool, rng):
        pass

    def choose(self, pool, rng):
        i0, i1 = rng.choice(len(pool), 2, replace=False)
        return pool[i0], pool[i1]

    def guess(self, x0, x1, x_hat, rng):
        raise NotImplementedError

    def observe(self, b):
        pass


class RandomGuessAdversary(Adversary):
    name = 'random'

    def guess(self, x0, x1, x_hat, rng):
        return int(rng.integers(2))


class NearestNeighborAdversary(Adversary):
    '''Guesses the challenge record closest to the anonymized one.'''
    name = 'nearest_neighbor'

    def guess(self, x0, x1, x_hat, rng):
        d0 = np.linalg.norm(x_hat - x0)
        d1 = np.linalg.norm(x_hat - x1)
        if d0 == d1:
            return int(rng.integers(2))
        return int(d1 < d0)


def _pair_features(x0, x1, x_hat):
    return np.abs(x_hat - x0) - np.abs(x_hat - x1)


class LogisticAdversary(Adversary):
    '''
    Trains a logistic-regression distinguisher on ``queries`` labelled
    (pair, anonymized record) examples obtained from the scheme before the
    game, then uses it to guess.
    '''
    name = 'logistic'

    def __init__(self, queries=500):
        self.queries = queries
        self.clf = None

    def prepare(self, scheme, pool, rng):
        feats, bits = [], []
        for _ in range(self.queries):
            x0, x1 = Adversary.choose(self, pool, rng)
            b = int(rng.integers(2))
            feats.append(_pair_features(x0, x1, scheme.encrypt((x0, x1)[b])))
            bits.append(b)
        if len(set(bits)) < 2:
            return
        self.clf = LogisticRegression(max_iter=2000)
        self.clf.fit(np.vstack(feats), np.array(bits))

    def guess(self, x0, x1, x_hat, rng):
        if self.clf is None:
            return int(rng.integers(2))
        return int(self.clf.predict(_pair_features(x0, x1, x_hat)[None])[0])


class SpyAdversary(Adversary):
    '''Is told the hidden bit; an upper-bound control.'''
    name = 'spy'
    spy = True

    def __init__(self):
        self.leaked = None

    def observe(self, b):
        self.leaked = b

    def guess(self, x0, x1, x_hat, rng):
        return self.leaked


ADVERSARIES = {
    'random': RandomGuessAdversary,
    'nearest_neighbor': NearestNeighborAdversary,
    'logistic': LogisticAdversary,
    'spy': SpyAdversary,
}


def _is_bit(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool) \
        and int(v) in (0, 1)


def run_distinguisher_game(scheme, adversary, pool, trials=10000, seed=0,
                           store=None):
    """
    Plays the game ``trials`` times.

    Args:
        scheme (Scheme) : what anonymizes the challenge record
        adversary (Adversary) : who picks the pair and guesses
        pool (array-like) : records the adversary picks from (the test split)
        trials (int) : number of trials, at least 1000
        seed (int) : seeds the hidden bits, the adversary's randomness and
            its preparation
        store (cox.Store) : if given, the transcript goes to the ``game``
            table

    Returns:
        A transcript dict with the keys of ``constants.GAME_COLUMNS``;
        ``epsilon_hat`` is the success rate minus 1/2 and ``std_error`` its
        binomial standard error.
    """
    if trials < 1000:
        raise ValueError(f"the game needs at least 1000 trials, got {trials}")
    pool = as_numpy(pool)
    if len(pool) < 2:
        raise ValueError("the record pool needs at least two records")
    bit_seed, adv_seed, prep_seed = derive_seeds(seed, 3)
    bits = np.random.default_rng(bit_seed)
    adv_rng = np.random.default_rng(adv_seed)
    adversary.prepare(scheme, pool, np.random.default_rng(prep_seed))

    successes, bit_sum = 0, 0
    iterator = tqdm(range(trials))
    for t in iterator:
        x0, x1 = adversary.choose(pool, adv_rng)
        b = int(bits.integers(2))
        x_hat = scheme.encrypt((x0, x1)[b])
        if adversary.spy:
            adversary.observe(b)
        b_prime = adversary.guess(x0, x1, x_hat, adv_rng)
        if not _is_bit(b_prime):
            raise ValueError(f"adversary {adversary.name} returned "
                             f"{b_prime!r}, not a bit")
        successes += int(b_prime) == b
        bit_sum += b
        if t % 1000 == 0:
            iterator.set_description(f"{scheme.name} vs {adversary.name} | "
                                     f"Rate {successes / (t + 1):.3f} ||")

    rate = successes / trials
    transcript = {
        'scheme': scheme.name,
        'adversary': adversary.name,
        'trials': trials,
        'successes': successes,
        'success_rate': rate,
        'epsilon_hat': rate - 0.5,
        'std_error': float(np.sqrt(rate * (1 - rate) / trials)),
        'hidden_bit_mean': bit_sum / trials,
    }
    if store is not None:
        ensure_table(store, consts.GAME_TABLE, consts.GAME_SCHEMA)
        store[consts.GAME_TABLE].append_row(transcript)
    return transcript
