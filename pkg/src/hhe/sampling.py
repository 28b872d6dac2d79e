"""P identities x N samples mini-batch construction."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientIdentities


@dataclass
class PKBatch:
    """``indices`` holds P groups of N dataset indices, grouped by identity."""

    P: int
    N: int
    identities: np.ndarray
    indices: np.ndarray


def _index_by_label(labels):
    # accepts a FeatureSet or a bare label array
    labels = np.asarray(getattr(labels, "labels", labels))
    return {int(lab): np.flatnonzero(labels == lab) for lab in np.unique(labels)}


def _draw(pool, N, rng):
    if pool.size >= N:
        return rng.choice(pool, size=N, replace=False)
    # Too few samples: keep all of them once and top up with replacement.
    extra = rng.choice(pool, size=N - pool.size, replace=True)
    return np.concatenate([rng.permutation(pool), extra])


def _check(n_ids, P, N):
    if P < 2 or N < 2:
        raise ValueError(f"P and N must both be >= 2, got P={P}, N={N}")
    if n_ids < P:
        raise InsufficientIdentities(f"dataset has {n_ids} identities, batch needs P={P}")


def _batch(by_label, ids, N, rng):
    indices = np.concatenate([_draw(by_label[int(i)], N, rng) for i in ids])
    return PKBatch(P=len(ids), N=N, identities=np.asarray(ids), indices=indices)


def pk_sample(labels, P, N, rng):
    """One batch: P identities without replacement, N samples from each.

    Args:
        labels: per-sample identity labels of the dataset.
        P: identities per batch.
        N: samples per identity.
        rng: ``numpy.random.Generator``.
    """
    by_label = _index_by_label(labels)
    _check(len(by_label), P, N)
    keys = np.array(sorted(by_label))
    return _batch(by_label, rng.choice(keys, size=P, replace=False), N, rng)


def epoch_iterator(labels, P, N, rng):
    """Yield ``ceil(n_ids / P)`` batches that together cover every identity.

    A short final group is padded with identities drawn uniformly, without
    replacement, from those already used earlier in the epoch.
    """
    by_label = _index_by_label(labels)
    _check(len(by_label), P, N)
    order = rng.permutation(np.array(sorted(by_label)))
    n_batches = math.ceil(order.size / P)
    for b in range(n_batches):
        ids = order[b * P:(b + 1) * P]
        if ids.size < P:
            seen = order[:b * P]
            ids = np.concatenate([ids, rng.choice(seen, size=P - ids.size, replace=False)])
        yield _batch(by_label, ids, N, rng)
