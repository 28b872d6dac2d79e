"""Metric-learning losses on the concentric hyperspheres.

Every loss returns a :class:`LossValue`. Functions that accept
``return_grad=True`` additionally return analytic gradients with respect
to their array inputs; triplet losses treat the mined hardest positive and
negative indices as constants of the forward pass.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import DegenerateBatch, DegenerateWeights, InvalidConfig, LabelOutOfRange

VARIANTS = ("C", "T", "C+T", "JAL", "JAL_o")

# Chord clamp used only inside the arcsin derivative.
EPS_CHORD = 1e-7


@dataclass(frozen=True)
class LossConfig:
    """Hyperparameters of every loss variant.

    ``theta_m`` is in radians here; the CLI accepts degrees.
    """

    lam: float = 0.2
    theta_m: float = math.radians(3.0)
    alpha: float = 12.0
    gamma: float = 1e-3
    m: float = 0.5
    variant: str = "JAL_o"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0.0 <= self.theta_m < math.pi:
            raise InvalidConfig(f"theta_m must lie in [0, pi), got {self.theta_m}")
        if not self.alpha > 0:
            raise InvalidConfig(f"alpha must be positive, got {self.alpha}")
        for name in ("lam", "gamma", "m"):
            if not getattr(self, name) >= 0:
                raise InvalidConfig(f"{name} must be nonnegative, got {getattr(self, name)}")

    @property
    def effective_gamma(self):
        # Only JAL_o carries the orthogonality penalty.
        return self.gamma if self.variant == "JAL_o" else 0.0


@dataclass
class BatchHardSelection:
    fp: np.ndarray
    cn: np.ndarray


@dataclass
class LossValue:
    """A scalar loss plus its decomposition.

    ``triplet``, ``classification`` and ``regularizer`` hold the terms as
    they enter ``value`` (so ``classification`` already includes lambda
    for the combined variants).
    """

    value: float
    active_triplets: int = 0
    n_anchors: int = 0
    triplet: float = 0.0
    classification: float = 0.0
    regularizer: float = 0.0

    @property
    def active_fraction(self):
        return self.active_triplets / self.n_anchors if self.n_anchors else 0.0


def batch_hard(dist, labels):
    """Farthest positive and closest negative for every anchor.

    Args:
        dist: (B, B) distance or angle matrix.
        labels: (B,) identity labels.

    Returns:
        BatchHardSelection; ties resolve to the lowest index.
    """
    dist = np.asarray(dist, dtype=np.float64)
    labels = np.asarray(labels)
    B = labels.shape[0]
    if dist.shape != (B, B):
        raise ValueError(f"distance matrix shape {dist.shape} does not match {B} labels")
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(B, dtype=bool)
    neg = ~same
    no_pos = np.flatnonzero(~pos.any(axis=1))
    if no_pos.size:
        raise DegenerateBatch(f"anchor {no_pos[0]} has no positive in the batch")
    no_neg = np.flatnonzero(~neg.any(axis=1))
    if no_neg.size:
        raise DegenerateBatch(f"anchor {no_neg[0]} has no negative in the batch")
    fp = np.argmax(np.where(pos, dist, -np.inf), axis=1)
    cn = np.argmin(np.where(neg, dist, np.inf), axis=1)
    return BatchHardSelection(fp=fp, cn=cn)


def _hinge_terms(dist, labels, margin):
    sel = batch_hard(dist, labels)
    idx = np.arange(dist.shape[0])
    args = dist[idx, sel.fp] - dist[idx, sel.cn] + margin
    return sel, args


def _squared_distances(X):
    diff = X[:, None, :] - X[None, :, :]
    return np.sum(diff * diff, axis=-1)


def triplet_hard_euclidean(features, labels, m, return_grad=False):
    """Batch-hard triplet loss on squared Euclidean distances.

    Mean over anchors of ``[d(a, fp)^2 - d(a, cn)^2 + m]_+``.
    """
    X = np.asarray(features, dtype=np.float64)
    B = X.shape[0]
    sel, args = _hinge_terms(_squared_distances(X), labels, m)
    active = args > 0
    out = LossValue(
        value=float(np.sum(np.where(active, args, 0.0)) / B),
        active_triplets=int(active.sum()),
        n_anchors=B,
    )
    out.triplet = out.value
    if not return_grad:
        return out
    grad = np.zeros_like(X)
    a = np.flatnonzero(active)
    # d/dx_i ||x_i - x_j||^2 = 2 (x_i - x_j), and the negative of that for x_j
    dp = 2.0 * (X[a] - X[sel.fp[a]]) / B
    dn = 2.0 * (X[a] - X[sel.cn[a]]) / B
    np.add.at(grad, a, dp - dn)
    np.add.at(grad, sel.fp[a], -dp)
    np.add.at(grad, sel.cn[a], dn)
    return out, grad


def angular_triplet(features_unit, labels, theta_m, return_grad=False):
    """Batch-hard angular triplet loss.

    Mean over anchors of ``[theta_ap - theta_an + theta_m]_+`` where both
    angles come from the hardest positive and negative chosen on angles.
    """
    X = np.asarray(features_unit, dtype=np.float64)
    B = X.shape[0]
    chords = geometry.pairwise_chords(X)
    sel, args = _hinge_terms(geometry.chord_to_angle(chords), labels, theta_m)
    active = args > 0
    out = LossValue(
        value=float(np.sum(np.where(active, args, 0.0)) / B),
        active_triplets=int(active.sum()),
        n_anchors=B,
    )
    out.triplet = out.value
    if not return_grad:
        return out
    grad = np.zeros_like(X)
    a = np.flatnonzero(active)
    # d theta / d u = (u - v) / (c * sqrt(1 - c^2 / 4)), chord c clamped away from 0 and 2
    c = np.clip(chords, EPS_CHORD, 2.0 - EPS_CHORD)
    k = 1.0 / (c * np.sqrt(1.0 - 0.25 * c * c))
    dp = (k[a, sel.fp[a]] / B)[:, None] * (X[a] - X[sel.fp[a]])
    dn = (k[a, sel.cn[a]] / B)[:, None] * (X[a] - X[sel.cn[a]])
    np.add.at(grad, a, dp - dn)
    np.add.at(grad, sel.fp[a], -dp)
    np.add.at(grad, sel.cn[a], dn)
    return out, grad


def softmax_ce(logits, labels, return_grad=False):
    """Mean softmax cross-entropy, stabilized by max subtraction."""
    Z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    B, K = Z.shape
    if K < 2:
        raise ValueError("need at least two classes")
    if labels.shape != (B,) or labels.min() < 0 or labels.max() >= K:
        raise LabelOutOfRange(f"labels must be {B} integers in [0, {K})")
    shifted = Z - Z.max(axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    log_p = shifted[np.arange(B), labels] - log_norm
    out = LossValue(value=float(-np.mean(log_p)), n_anchors=B)
    out.classification = out.value
    if not return_grad:
        return out
    grad = np.exp(shifted - log_norm[:, None])
    grad[np.arange(B), labels] -= 1.0
    return out, grad / B


def angular_logits(features_unit, W, alpha):
    """Bias-free logits ``alpha * cos(theta_l)`` against normalized class centers."""
    Xu = np.asarray(features_unit, dtype=np.float64)
    # alpha = 0 is allowed here and yields uniform logits
    return alpha * (Xu @ geometry.l2_normalize_rows(W).T)


def angular_classification(features_unit, W, labels, alpha, return_grad=False):
    """Softmax cross-entropy over :func:`angular_logits`.

    With ``return_grad`` the gradients are taken with respect to the unit
    features and the raw (unnormalized) class-center matrix ``W``.
    """
    Xu = np.asarray(features_unit, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if not return_grad:
        return softmax_ce(angular_logits(Xu, W, alpha), labels)
    w_norm = np.linalg.norm(W, axis=1)
    W_hat = geometry.l2_normalize_rows(W)
    out, dZ = softmax_ce(alpha * (Xu @ W_hat.T), labels, return_grad=True)
    dXu = alpha * dZ @ W_hat
    dW_hat = alpha * dZ.T @ Xu
    dW = (dW_hat - W_hat * np.sum(W_hat * dW_hat, axis=1, keepdims=True)) / w_norm[:, None]
    return out, dXu, dW


def joint_angular(features_unit, W, labels, config):
    """Angular triplet loss plus ``lam`` times angular classification loss."""
    at = angular_triplet(features_unit, labels, config.theta_m)
    ac = angular_classification(features_unit, W, labels, config.alpha)
    return LossValue(
        value=at.value + config.lam * ac.value,
        active_triplets=at.active_triplets,
        n_anchors=at.n_anchors,
        triplet=at.value,
        classification=config.lam * ac.value,
    )


def orthogonal_regularizer(W_e, return_grad=False):
    """Squared Frobenius deviation of the column Gram matrix from identity."""
    W_e = np.asarray(W_e, dtype=np.float64)
    D = W_e.T @ W_e - np.eye(W_e.shape[1])
    value = float(np.sum(D * D))
    if not return_grad:
        return value
    return value, 4.0 * W_e @ D


def orthogonality_score(W_e):
    """Diagonal mass of the Gram matrix over its total absolute mass.

    Lies in ``[1/k, 1]`` for ``k`` columns; 1 exactly when columns are
    mutually orthogonal.
    """
    W_e = np.asarray(W_e, dtype=np.float64)
    G = W_e.T @ W_e
    total = np.sum(np.abs(G))
    if total == 0:
        raise DegenerateWeights("Gram matrix is all zero")
    return float(np.trace(G) / total)


def _normalize_backward(X, norms, dXu):
    Xu = X / norms[:, None]
    return (dXu - Xu * np.sum(Xu * dXu, axis=1, keepdims=True)) / norms[:, None]


def total_loss(features, W, W_e, labels, config, return_grad=False):
    """Full objective for ``config.variant``.

    ``features`` are raw embeddings; angular variants normalize them
    first (a no-op up to rounding for rows that are already unit).

    C, T and C+T use plain softmax over ``features @ W.T``, Euclidean
    batch-hard triplet with margin ``m``, and their lambda-weighted sum.
    JAL is angular triplet plus lambda times angular classification, and
    JAL_o adds ``gamma`` times the orthogonality penalty on ``W_e``.

    With ``return_grad`` also returns gradients with respect to
    ``features``, ``W`` and ``W_e`` (in that order).
    """
    X = np.asarray(features, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    v = config.variant
    use_triplet = v != "C"
    use_cls = v != "T"
    cls_weight = 1.0 if v == "C" else config.lam
    gamma = config.effective_gamma

    dX = np.zeros_like(X)
    dW = np.zeros_like(W)
    dWe = None
    out = LossValue(value=0.0, n_anchors=X.shape[0])

    if v in ("JAL", "JAL_o"):
        norms = np.linalg.norm(X, axis=1)
        Xu = geometry.l2_normalize_rows(X)
        dXu = np.zeros_like(X)
        at = angular_triplet(Xu, labels, config.theta_m, return_grad=return_grad)
        ac = angular_classification(Xu, W, labels, config.alpha, return_grad=return_grad)
        if return_grad:
            at, g_at = at
            ac, g_ac, dW_ac = ac
            dXu += g_at + cls_weight * g_ac
            dW += cls_weight * dW_ac
            dX = _normalize_backward(X, norms, dXu)
        out.triplet = at.value
        out.active_triplets = at.active_triplets
        out.classification = cls_weight * ac.value
    else:
        if use_triplet:
            t = triplet_hard_euclidean(X, labels, config.m, return_grad=return_grad)
            if return_grad:
                t, g_t = t
                dX += g_t
            out.triplet = t.value
            out.active_triplets = t.active_triplets
        if use_cls:
            c = softmax_ce(X @ W.T, labels, return_grad=return_grad)
            if return_grad:
                c, dZ = c
                dX += cls_weight * dZ @ W
                dW += cls_weight * dZ.T @ X
            out.classification = cls_weight * c.value

    if gamma > 0:
        r = orthogonal_regularizer(W_e, return_grad=return_grad)
        if return_grad:
            r, dWe = r
            dWe = gamma * dWe
        out.regularizer = gamma * r
    if return_grad and dWe is None:
        dWe = np.zeros_like(np.asarray(W_e, dtype=np.float64))

    out.value = out.triplet + out.classification + out.regularizer
    if return_grad:
        return out, dX, dW, dWe
    return out


def loss_and_grad(net, x, labels, config):
    """Objective value and gradient for every parameter of ``net``.

    Args:
        net: an :class:`hhe.model.EmbeddingNetwork`.
        x: (B, d_in) raw inputs.
        labels: (B,) class indices in ``[0, K)``.
        config: LossConfig.

    Returns:
        (LossValue, grads) where ``grads`` maps parameter names to arrays of
        the same shapes as ``net.parameters()``.
    """
    from .model import backward, forward_with_cache

    emb, cache = forward_with_cache(net, x)
    out, dE, dW, dWe = total_loss(emb, net.classifier, net.embed, labels, config, return_grad=True)
    grads = backward(net, cache, dE)
    grads["embed"] = grads["embed"] + dWe
    grads["classifier"] = dW
    return out, grads
