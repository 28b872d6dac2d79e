"""Mini-batch training of the embedding network."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataset
from .losses import LossConfig, loss_and_grad, orthogonality_score
from .model import init_network
from .optim import Adam, NesterovSGD, StageSchedule
from .sampling import epoch_iterator

LOG_COLUMNS = (
    "epoch", "loss", "L_at", "lambda_L_ac", "gamma_R_e", "S_We", "active_triplet_fraction",
)


@dataclass(frozen=True)
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    hidden: tuple = (128, 64)
    d_embed: int = 32
    P: int = 8
    N: int = 4
    stage_epochs: tuple = (30, 10, 10)
    lr: float = 1e-3
    # Nesterov SGD settings, used only by the C variant
    lr_sgd: float = 0.1
    momentum: float = 0.9


def class_index(labels):
    """Map identity labels to contiguous class indices ``0..K-1``."""
    classes = np.unique(labels)
    return classes, np.searchsorted(classes, labels)


def make_optimizer(config):
    if config.loss.variant == "C":
        return NesterovSGD(
            StageSchedule(config.lr_sgd, tuple(config.stage_epochs)), momentum=config.momentum
        )
    return Adam(StageSchedule(config.lr, tuple(config.stage_epochs)))


def train(dataset, config, seed, callback=None, step_callback=None):
    """Train a fresh network on ``dataset``.

    Returns:
        (net, log) where ``log`` is a list of per-epoch dicts keyed by
        :data:`LOG_COLUMNS`; losses are averaged over the epoch's batches and
        ``S_We`` is measured after the epoch's last update.
        ``step_callback`` receives the LossValue of every optimizer step.
    """
    classes, y = class_index(dataset.labels)
    if classes.size < 2:
        raise DegenerateDataset("need at least 2 identities")
    counts = np.bincount(y)
    if counts.min() < 2:
        raise DegenerateDataset(f"identity {classes[np.argmin(counts)]} has fewer than 2 samples")

    dims = (dataset.dim, *config.hidden, config.d_embed)
    net = init_network(dims, classes.size, seed)
    net.meta["classes"] = " ".join(str(int(c)) for c in classes)
    net.meta["variant"] = config.loss.variant
    rng = np.random.default_rng([seed, 1])
    opt = make_optimizer(config)
    params = net.parameters()
    P = min(config.P, classes.size)

    log = []
    for epoch in range(sum(config.stage_epochs)):
        rows = []
        for batch in epoch_iterator(y, P, config.N, rng):
            out, grads = loss_and_grad(net, dataset.vectors[batch.indices], y[batch.indices], config.loss)
            opt.step(params, grads, epoch)
            if step_callback is not None:
                step_callback(out)
            rows.append(
                (out.value, out.triplet, out.classification, out.regularizer, out.active_fraction)
            )
        means = np.mean(rows, axis=0)
        entry = dict(zip(LOG_COLUMNS, (epoch, *means[:4], orthogonality_score(net.embed), means[4])))
        log.append(entry)
        if callback is not None:
            callback(entry)
    return net, log
