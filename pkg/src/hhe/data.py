"""Synthetic multi-camera identity data and the ``HHE v1`` feature file.

File layout (plain text, ASCII)::

    HHE v1 <count> <dim>
    sample_id,label,camera,v1,...,vd
    ...

Floats are written with ``repr`` (shortest round-trip form), so
``load_features(save_features(d))`` reproduces every value bit for bit.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateDataset, FormatError, InvalidConfig

HEADER_MAGIC = "HHE"
HEADER_VERSION = "v1"


class LabeledFeature(NamedTuple):
    sample_id: int
    label: int
    camera: int
    vector: np.ndarray


@dataclass
class FeatureSet:
    """Column-oriented collection of labeled samples."""

    sample_ids: np.ndarray
    labels: np.ndarray
    cameras: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.cameras = np.asarray(self.cameras, dtype=np.int64).reshape(-1)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        n = self.sample_ids.shape[0]
        if self.vectors.ndim != 2 or self.vectors.shape[0] != n:
            raise ValueError(f"vectors must have shape ({n}, d), got {self.vectors.shape}")
        if self.labels.shape[0] != n or self.cameras.shape[0] != n:
            raise ValueError("sample_ids, labels and cameras must have equal length")

    def __len__(self):
        return self.sample_ids.shape[0]

    def __getitem__(self, i):
        return LabeledFeature(
            int(self.sample_ids[i]), int(self.labels[i]), int(self.cameras[i]), self.vectors[i]
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def dim(self):
        return self.vectors.shape[1]

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return FeatureSet(
            self.sample_ids[index], self.labels[index], self.cameras[index], self.vectors[index]
        )

    def with_vectors(self, vectors):
        return FeatureSet(self.sample_ids, self.labels, self.cameras, vectors)

    def identities(self):
        return np.unique(self.labels)

    def equals(self, other):
        return (
            np.array_equal(self.sample_ids, other.sample_ids)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.cameras, other.cameras)
            and self.vectors.shape == other.vectors.shape
            and np.array_equal(self.vectors.view(np.uint64), other.vectors.view(np.uint64))
        )


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic identity generator.

    Each sample is ``scale * prototype + N(0, sigma_id^2 I) + camera_offset``
    with a random unit prototype per identity and a fixed Gaussian offset
    per camera.
    """

    num_ids: int = 32
    samples_per_id: int = 20
    num_cameras: int = 4
    dim: int = 64
    sigma_id: float = 0.08
    sigma_cam: float = 0.15
    scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_ids < 2:
            raise InvalidConfig("need at least 2 identities")
        if self.num_cameras < 2:
            raise InvalidConfig("need at least 2 cameras")
        if self.samples_per_id < 2:
            raise InvalidConfig("need at least 2 samples per identity")
        if self.dim < 2:
            raise InvalidConfig("dim must be >= 2")
        if not self.sigma_id > 0:
            raise InvalidConfig("sigma_id must be positive")
        if not self.sigma_cam >= 0:
            raise InvalidConfig("sigma_cam must be nonnegative")


def generate_synthetic(config, return_prototypes=False):
    """Draw a labeled multi-camera dataset.

    Sample ``j`` of identity ``l`` is seen by camera ``(l + j) % C`` so
    every identity appears in at least two cameras.
    """
    rng = np.random.default_rng(config.seed)
    K, S, C, d = config.num_ids, config.samples_per_id, config.num_cameras, config.dim
    protos = rng.normal(size=(K, d))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    offsets = rng.normal(0.0, config.sigma_cam, size=(C, d))
    labels = np.repeat(np.arange(K), S)
    j = np.tile(np.arange(S), K)
    cameras = (labels + j) % C
    noise = rng.normal(0.0, config.sigma_id, size=(K * S, d))
    vectors = config.scale * protos[labels] + noise + offsets[cameras]
    ds = FeatureSet(np.arange(K * S), labels, cameras, vectors)
    if return_prototypes:
        return ds, protos
    return ds


def save_features(dataset, path):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{HEADER_MAGIC} {HEADER_VERSION} {len(dataset)} {dataset.dim}\n")
        for sid, lab, cam, vec in zip(
            dataset.sample_ids, dataset.labels, dataset.cameras, dataset.vectors
        ):
            fh.write(f"{sid},{lab},{cam},")
            fh.write(",".join(repr(float(v)) for v in vec))
            fh.write("\n")


def load_features(path):
    """Parse an ``HHE v1`` file; FormatError carries the 1-based line number."""
    with open(path, encoding="ascii") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 4 or parts[0] != HEADER_MAGIC or parts[1] != HEADER_VERSION:
            raise FormatError(f"bad header {header.strip()!r}", line=1)
        try:
            count, dim = int(parts[2]), int(parts[3])
        except ValueError:
            raise FormatError("count and dim must be integers", line=1) from None
        ids = np.empty(count, dtype=np.int64)
        labels = np.empty(count, dtype=np.int64)
        cams = np.empty(count, dtype=np.int64)
        vecs = np.empty((count, dim))
        n = 0
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split(",")
            if len(fields) != dim + 3:
                raise FormatError(f"expected {dim + 3} columns, got {len(fields)}", line=lineno)
            if n >= count:
                raise FormatError(f"more rows than the declared {count}", line=lineno)
            try:
                ids[n], labels[n], cams[n] = int(fields[0]), int(fields[1]), int(fields[2])
                vecs[n] = [float(f) for f in fields[3:]]
            except ValueError as exc:
                raise FormatError(str(exc), line=lineno) from None
            if not np.all(np.isfinite(vecs[n])):
                raise FormatError("non-finite feature value", line=lineno)
            if labels[n] < 0 or cams[n] < 0:
                raise FormatError("label and camera must be nonnegative", line=lineno)
            n += 1
    if n != count:
        raise FormatError(f"header declares {count} rows, found {n}")
    return FeatureSet(ids, labels, cams, vecs)


def _check_multicamera(dataset):
    for lab in dataset.identities():
        cams = dataset.cameras[dataset.labels == lab]
        if cams.size < 2 or np.unique(cams).size < 2:
            raise DegenerateDataset(f"identity {lab} needs >= 2 samples in >= 2 cameras")


def split_train_test(dataset, test_fraction, rng):
    """Hold out ``round(test_fraction * n)`` samples per (identity, camera) cell.

    Every identity keeps the same identities on both sides, so the classifier
    trained on one part has a class for every query in the other.
    """
    if not 0.0 <= test_fraction <= 1.0:
        raise InvalidConfig(f"test_fraction must be in [0, 1], got {test_fraction}")
    test = np.zeros(len(dataset), dtype=bool)
    for lab in dataset.identities():
        for cam in np.unique(dataset.cameras[dataset.labels == lab]):
            idx = np.flatnonzero((dataset.labels == lab) & (dataset.cameras == cam))
            k = int(math.floor(test_fraction * idx.size + 0.5))
            test[rng.permutation(idx)[:k]] = True
    return dataset.subset(np.flatnonzero(~test)), dataset.subset(np.flatnonzero(test))


def split_query_gallery(dataset, rng, query_fraction):
    """Pick query samples so each keeps a cross-camera match in the gallery.

    Up to ``floor(query_fraction * n)`` queries are drawn per identity
    (at least one); a candidate is skipped when taking it would leave some
    query without a same-identity gallery sample in another camera.
    """
    if not query_fraction > 0:
        raise DegenerateDataset("query_fraction must be positive; the query set would be empty")
    _check_multicamera(dataset)
    is_query = np.zeros(len(dataset), dtype=bool)
    for lab in dataset.identities():
        idx = np.flatnonzero(dataset.labels == lab)
        want = min(max(1, int(query_fraction * idx.size)), idx.size - 1)
        chosen = []
        for cand in rng.permutation(idx):
            if len(chosen) == want:
                break
            trial = chosen + [cand]
            rest = np.setdiff1d(idx, trial)
            rest_cams = set(dataset.cameras[rest].tolist())
            if all(rest_cams - {int(dataset.cameras[q])} for q in trial):
                chosen = trial
        is_query[chosen] = True
    return dataset.subset(np.flatnonzero(is_query)), dataset.subset(np.flatnonzero(~is_query))
