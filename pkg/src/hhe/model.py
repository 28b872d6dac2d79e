"""Feed-forward embedding network with manual backpropagation.

Inputs are row vectors; every affine layer computes ``a @ W + b``. The
embedding layer and the classifier carry no bias so that features and
class centers share the origin.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, FormatError, InvalidArchitecture

MODEL_MAGIC = "HHEMODEL"
MODEL_VERSION = "v1"


@dataclass
class EmbeddingNetwork:
    """Parameters of the embedding map and the class-center matrix.

    Attributes:
        hidden: list of ``(weight, bias)`` pairs, each followed by a ReLU.
        embed: (d_hidden, d_embed) embedding weight, no bias.
        classifier: (K, d_embed) class centers, one row per identity.
        meta: free-form string metadata stored alongside the weights.
    """

    hidden: list
    embed: np.ndarray
    classifier: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def d_in(self):
        return self.hidden[0][0].shape[0] if self.hidden else self.embed.shape[0]

    @property
    def d_embed(self):
        return self.embed.shape[1]

    @property
    def num_classes(self):
        return self.classifier.shape[0]

    def parameters(self):
        """Name -> array mapping; arrays are live references."""
        params = {}
        for i, (w, b) in enumerate(self.hidden):
            params[f"hidden.{i}.weight"] = w
            params[f"hidden.{i}.bias"] = b
        params["embed"] = self.embed
        params["classifier"] = self.classifier
        return params

    def copy(self):
        return EmbeddingNetwork(
            hidden=[(w.copy(), b.copy()) for w, b in self.hidden],
            embed=self.embed.copy(),
            classifier=self.classifier.copy(),
            meta=dict(self.meta),
        )


def init_network(dims, num_classes, seed):
    """He-initialized network.

    Args:
        dims: ``(d_in, h_1, ..., h_n, d_embed)``; with only two entries the
            model is a single linear embedding.
        num_classes: number of training identities K.
        seed: integer seed.
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or min(dims) < 1:
        raise InvalidArchitecture(f"dims must list at least input and embedding sizes, got {dims}")
    if num_classes < 2:
        raise InvalidArchitecture(f"need at least 2 classes, got {num_classes}")
    rng = np.random.default_rng(seed)

    def he(fan_in, fan_out):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))

    hidden = [(he(a, b), np.zeros(b)) for a, b in zip(dims[:-2], dims[1:-1])]
    embed = he(dims[-2], dims[-1])
    classifier = rng.normal(0.0, np.sqrt(2.0 / dims[-1]), size=(num_classes, dims[-1]))
    return EmbeddingNetwork(hidden=hidden, embed=embed, classifier=classifier)


def forward_with_cache(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.d_in:
        raise DimensionMismatch(f"expected inputs of width {net.d_in}, got shape {x.shape}")
    acts = [x]
    pre = []
    a = x
    for w, b in net.hidden:
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)
    return a @ net.embed, (acts, pre)


def forward(net, x):
    """Unnormalized (B, d_embed) embeddings for raw inputs ``x``."""
    return forward_with_cache(net, x)[0]


def backward(net, cache, d_emb):
    """Backpropagate ``dL/d(embeddings)`` into the network weights.

    The returned dict has an entry for every parameter; the classifier
    gradient is zero here since the classifier does not touch the
    embeddings.
    """
    acts, pre = cache
    grads = {"embed": acts[-1].T @ d_emb, "classifier": np.zeros_like(net.classifier)}
    da = d_emb @ net.embed.T
    for i in range(len(net.hidden) - 1, -1, -1):
        w, _ = net.hidden[i]
        dz = da * (pre[i] > 0)
        grads[f"hidden.{i}.weight"] = acts[i].T @ dz
        grads[f"hidden.{i}.bias"] = dz.sum(axis=0)
        if i:
            da = dz @ w.T
    return grads


def relu_margin(net, x):
    """Smallest |pre-activation| over the batch; distance to a ReLU kink."""
    _, (_, pre) = forward_with_cache(net, x)
    return min((float(np.min(np.abs(z))) for z in pre), default=np.inf)


def _write_array(fh, name, arr):
    arr = np.atleast_2d(arr) if arr.ndim == 1 else arr
    fh.write(f"array {name} {arr.shape[0]} {arr.shape[1]}\n")
    for row in arr:
        fh.write(",".join(repr(float(v)) for v in row) + "\n")


def save_model(net, path):
    """Write ``net`` as a versioned text container with full-precision floats."""
    params = net.parameters()
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{MODEL_MAGIC} {MODEL_VERSION} {len(net.hidden)} {len(params)} {len(net.meta)}\n")
        for key in sorted(net.meta):
            fh.write(f"meta {key} {net.meta[key]}\n")
        for name, arr in params.items():
            _write_array(fh, name, arr)


def load_model(path):
    """Inverse of :func:`save_model`; FormatError on malformed content."""
    try:
        return _parse_model(path)
    except (IndexError, KeyError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed model file {path}: {exc}") from None


def _parse_model(path):
    with open(path, encoding="ascii") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("empty model file", line=1)
    head = lines[0].split()
    if len(head) != 5 or head[0] != MODEL_MAGIC or head[1] != MODEL_VERSION:
        raise FormatError(f"bad model header {lines[0]!r}", line=1)
    n_hidden, n_arrays, n_meta = (int(t) for t in head[2:])
    pos = 1
    meta = {}
    for _ in range(n_meta):
        parts = lines[pos].split(" ", 2)
        if len(parts) != 3 or parts[0] != "meta":
            raise FormatError("expected meta line", line=pos + 1)
        meta[parts[1]] = parts[2]
        pos += 1
    arrays = {}
    for _ in range(n_arrays):
        parts = lines[pos].split()
        if len(parts) != 4 or parts[0] != "array":
            raise FormatError("expected array header", line=pos + 1)
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        data = np.empty((rows, cols))
        for r in range(rows):
            fields = lines[pos + 1 + r].split(",")
            if len(fields) != cols:
                raise FormatError(f"expected {cols} values, got {len(fields)}", line=pos + 2 + r)
            data[r] = [float(f) for f in fields]
        arrays[name] = data
        pos += rows + 1
    hidden = [
        (arrays[f"hidden.{i}.weight"], arrays[f"hidden.{i}.bias"].reshape(-1))
        for i in range(n_hidden)
    ]
    return EmbeddingNetwork(
        hidden=hidden, embed=arrays["embed"], classifier=arrays["classifier"], meta=meta
    )
