"""Normalization and angular-distance primitives.

Features live on the unit hypersphere and class centers on a sphere of
radius ``alpha`` around the same origin. Angles between unit vectors are
computed from the chord length, ``theta = 2 * arcsin(|u - v| / 2)``, which
stays accurate for small angles where ``arccos(u . v)`` does not.
"""

import numpy as np

from .errors import DimensionMismatch, ZeroVector

EPS_NORM = 1e-12

# Upper bound on elements in the (rows, cols, dim) difference buffer used by
# cross_angles.
_CHUNK_ELEMENTS = 1 << 22


def l2_normalize(v):
    """Return ``v / ||v||``; raises ZeroVector when the norm is <= 1e-12."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > EPS_NORM:
        raise ZeroVector(f"cannot normalize vector with norm {norm:g}")
    return v / norm


def l2_normalize_rows(X):
    """Row-wise :func:`l2_normalize` for a 2-D array."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    bad = np.flatnonzero(~(norms > EPS_NORM))
    if bad.size:
        raise ZeroVector(f"row {bad[0]} has norm {norms[bad[0]]:g}")
    return X / norms[:, None]


def normalize_weights(W, alpha):
    """Scale every row of ``W`` onto the sphere of radius ``alpha``.

    Args:
        W: (K, d) class-center matrix.
        alpha: positive radius.

    Returns:
        (K, d) array whose row ``l`` is ``alpha * W[l] / ||W[l]||``.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return alpha * l2_normalize_rows(W)


def _check_pair(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"shapes {u.shape} and {v.shape} differ")
    return u, v


def cosine(u, v):
    """Cosine of the angle between two unit vectors, clamped to [-1, 1]."""
    u, v = _check_pair(u, v)
    return float(np.clip(np.dot(u, v), -1.0, 1.0))


def angular_distance(u, v):
    """Angle in radians between unit vectors ``u`` and ``v``."""
    u, v = _check_pair(u, v)
    chord = np.sqrt(np.sum((u - v) ** 2))
    return float(2.0 * np.arcsin(min(chord / 2.0, 1.0)))


def chord_to_angle(chord):
    return 2.0 * np.arcsin(np.minimum(chord / 2.0, 1.0))


def pairwise_chords(X):
    """(B, B) matrix of Euclidean distances between rows of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def pairwise_angles(X):
    """Symmetric (B, B) matrix of angles between the unit rows of ``X``.

    The diagonal is exactly zero.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError(f"expected a (B, d) array with B >= 2, got shape {X.shape}")
    return chord_to_angle(pairwise_chords(X))


def cross_angles(A, B):
    """(n, m) matrix of angles between unit rows of ``A`` and ``B``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"feature dims {A.shape[1]} and {B.shape[1]} differ")
    out = np.empty((A.shape[0], B.shape[0]))
    step = max(1, _CHUNK_ELEMENTS // max(1, B.shape[0] * A.shape[1]))
    for start in range(0, A.shape[0], step):
        diff = A[start:start + step, None, :] - B[None, :, :]
        out[start:start + step] = np.sqrt(np.sum(diff * diff, axis=-1))
    return chord_to_angle(out)
