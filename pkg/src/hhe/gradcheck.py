"""Central finite-difference check of :func:`hhe.losses.loss_and_grad`.

Each trial draws a small random network and a P x N batch. Draws where a
hinge argument, a ReLU pre-activation or a pairwise angle sits within
``KINK_TOL`` of a nondifferentiable point are redrawn. Coordinates whose
+-h probe changes the mined triplets, the active hinge set or the ReLU
pattern are skipped, since the two-sided difference then straddles a kink.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import geometry
from .losses import VARIANTS, LossConfig, _hinge_terms, _squared_distances, loss_and_grad, total_loss
from .model import forward_with_cache, init_network

KINK_TOL = 1e-6
TOLERANCE = 1e-4
STEP = 1e-5
# Denominator floor, relative to max(1, |loss|): central differences carry
# roundoff of order eps * |loss| / h, so exactly-zero gradients are
# compared in absolute terms.
ABS_FLOOR = 1e-6
MIN_EMBED_NORM = 1e-3


@dataclass
class GradcheckResult:
    variant: str
    max_rel_error: float
    checked: int
    skipped: int
    redraws: int

    @property
    def passed(self):
        return self.max_rel_error <= TOLERANCE


def _signature(net, x, labels, config):
    emb, (_, pre) = forward_with_cache(net, x)
    parts = [np.concatenate([(z > 0).ravel() for z in pre]) if pre else np.zeros(0, bool)]
    if config.variant in ("JAL", "JAL_o"):
        dist = geometry.pairwise_angles(geometry.l2_normalize_rows(emb))
        sel, args = _hinge_terms(dist, labels, config.theta_m)
    elif config.variant in ("T", "C+T"):
        sel, args = _hinge_terms(_squared_distances(emb), labels, config.m)
    else:
        return parts[0].tobytes(), None
    parts += [sel.fp, sel.cn, args > 0]
    return b"".join(np.asarray(p).tobytes() for p in parts), (emb, args)


def _near_kink(net, x, labels, config):
    emb, (_, pre) = forward_with_cache(net, x)
    # normalization is singular at the origin
    if np.min(np.linalg.norm(emb, axis=1)) < MIN_EMBED_NORM:
        return True
    if pre and min(float(np.min(np.abs(z))) for z in pre) < KINK_TOL:
        return True
    _, extra = _signature(net, x, labels, config)
    if extra is None:
        return False
    emb, args = extra
    if np.min(np.abs(args)) < KINK_TOL:
        return True
    if config.variant in ("JAL", "JAL_o"):
        A = geometry.pairwise_angles(geometry.l2_normalize_rows(emb))
        off = A[~np.eye(A.shape[0], dtype=bool)]
        if off.min() < KINK_TOL or off.max() > np.pi - KINK_TOL:
            return True
    return False


def _loss(net, x, labels, config):
    emb, _ = forward_with_cache(net, x)
    return total_loss(emb, net.classifier, net.embed, labels, config).value


def draw_problem(rng, dims=(5, 8, 6, 4), P=3, N=2):
    """Random small network, inputs and labels for one gradient check."""
    net = init_network(dims, P, int(rng.integers(2**31)))
    x = rng.normal(size=(P * N, dims[0]))
    labels = np.repeat(np.arange(P), N)
    return net, x, labels


def check_variant(config, trials=20, seed=0, h=STEP, corrupt=0.0):
    """Largest relative error between analytic and numeric gradients.

    Args:
        config: LossConfig; its ``variant`` selects the objective.
        trials: number of random problems.
        seed: seed for the problem draws.
        h: finite-difference step.
        corrupt: test hook; scales the analytic gradient by ``1 + corrupt``.
    """
    rng = np.random.default_rng(seed)
    worst, checked, skipped, redraws = 0.0, 0, 0, 0
    for _ in range(trials):
        while True:
            net, x, labels = draw_problem(rng)
            if not _near_kink(net, x, labels, config):
                break
            redraws += 1
        out, grads = loss_and_grad(net, x, labels, config)
        floor = ABS_FLOOR * max(1.0, abs(out.value))
        base_sig, _ = _signature(net, x, labels, config)
        for name, p in net.parameters().items():
            analytic = grads[name] * (1.0 + corrupt)
            for i in np.ndindex(p.shape):
                old = p[i]
                p[i] = old + h
                sig_plus, _ = _signature(net, x, labels, config)
                f_plus = _loss(net, x, labels, config)
                p[i] = old - h
                sig_minus, _ = _signature(net, x, labels, config)
                f_minus = _loss(net, x, labels, config)
                p[i] = old
                if sig_plus != base_sig or sig_minus != base_sig:
                    skipped += 1
                    continue
                numeric = (f_plus - f_minus) / (2.0 * h)
                a = analytic[i]
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
                checked += 1
    return GradcheckResult(config.variant, worst, checked, skipped, redraws)


def check_all(config=None, trials=20, seed=0, corrupt=0.0):
    config = config or LossConfig()
    return [
        check_variant(replace(config, variant=v), trials=trials, seed=seed, corrupt=corrupt)
        for v in VARIANTS
    ]
