"""Retrieval evaluation: ranking, CMC, mAP and test-time feature averaging.

Two protocols are supported:

* ``market``: every query is ranked against the full gallery after
  dropping gallery samples that share both its identity and its camera.
* ``cuhk``: single-gallery-shot. In each repeat, every query sees one
  randomly drawn eligible sample per gallery identity; CMC and mAP are
  averaged over the repeats.

Sums of per-query values use ``math.fsum`` so results do not depend on
summation order.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import DimensionMismatch, EmptyGallery, EmptyList, NoRelevant

PROTOCOLS = ("market", "cuhk")
AP_MODES = ("hit", "trapezoid")


@dataclass
class RankingResult:
    query_id: int
    order: np.ndarray
    distances: np.ndarray
    relevant: np.ndarray


@dataclass
class EvalReport:
    cmc: np.ndarray
    map: float
    repeats: int = 1
    n_queries: int = 0
    skipped_queries: int = 0
    per_repeat: list = field(default_factory=list)

    @property
    def rank1(self):
        return float(self.cmc[0])

    def topk(self, k):
        return float(self.cmc[min(k, len(self.cmc)) - 1])


def _rank(query_id, label, camera, dists, g_labels, g_cams, candidates=None):
    keep = ~((g_labels == label) & (g_cams == camera))
    if candidates is not None:
        mask = np.zeros_like(keep)
        mask[candidates] = True
        keep &= mask
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise EmptyGallery(f"query {query_id}: no gallery samples left after exclusion")
    # stable sort on ascending indices: ties keep gallery order
    order = idx[np.argsort(dists[idx], kind="stable")]
    return RankingResult(
        query_id=int(query_id),
        order=order,
        distances=dists[order],
        relevant=g_labels[order] == label,
    )


def rank_query(query, gallery):
    """Rank ``gallery`` (a FeatureSet) by angle to a LabeledFeature ``query``.

    Gallery entries with the query's identity *and* camera are excluded.
    """
    q = geometry.l2_normalize(query.vector)
    if q.shape[0] != gallery.dim:
        raise DimensionMismatch(f"query dim {q.shape[0]} != gallery dim {gallery.dim}")
    G = geometry.l2_normalize_rows(gallery.vectors)
    dists = geometry.cross_angles(q[None, :], G)[0]
    return _rank(query.sample_id, query.label, query.camera, dists, gallery.labels, gallery.cameras)


def average_precision(result, mode="hit"):
    """Average precision of a ranked list.

    ``hit`` averages precision@k over the ranks k of relevant items.
    ``trapezoid`` integrates the precision-recall curve with the trapezoid
    rule, starting from precision 1 at recall 0.
    """
    rel = np.asarray(result.relevant, dtype=bool)
    R = int(rel.sum())
    if R == 0:
        raise NoRelevant(f"query {result.query_id} has no relevant gallery item")
    ranks = np.flatnonzero(rel) + 1
    hits = np.arange(1, R + 1)
    precision = hits / ranks
    if mode == "hit":
        return math.fsum(precision.tolist()) / R
    if mode == "trapezoid":
        # precision at rank k-1 for each hit at rank k (1.0 when k == 1)
        before = np.where(ranks > 1, (hits - 1) / np.maximum(ranks - 1, 1), 1.0)
        return math.fsum(((before + precision) / 2.0).tolist()) / R
    raise ValueError(f"unknown AP mode {mode!r}")


def cmc_hits(result, k_max):
    """0/1 vector: entry k-1 is 1 when a relevant item is within the top k."""
    rel = np.asarray(result.relevant, dtype=bool)
    out = np.zeros(k_max, dtype=np.int64)
    if rel.any():
        first = int(np.argmax(rel))
        if first < k_max:
            out[first:] = 1
    return out


def _prepare(query, gallery):
    if query.dim != gallery.dim:
        raise DimensionMismatch(f"query dim {query.dim} != gallery dim {gallery.dim}")
    if len(query) == 0:
        raise EmptyList("query set is empty")
    if len(gallery) == 0:
        raise EmptyGallery("gallery is empty")
    Q = geometry.l2_normalize_rows(query.vectors)
    G = geometry.l2_normalize_rows(gallery.vectors)
    return geometry.cross_angles(Q, G)


def _summarize(rankings, k_max, ap_mode):
    hits = []
    aps = []
    for r in rankings:
        if r.relevant.any():
            hits.append(cmc_hits(r, k_max))
            aps.append(average_precision(r, ap_mode))
    if not aps:
        raise NoRelevant("no query has a relevant gallery item")
    cmc = np.sum(hits, axis=0) / len(hits)
    return cmc, math.fsum(aps) / len(aps), len(rankings) - len(aps)


def evaluate(query, gallery, protocol="market", k_max=10, repeats=10, seed=0, ap_mode="hit"):
    """CMC and mAP of ``query`` against ``gallery`` (both FeatureSets).

    Queries with no relevant gallery item after exclusion are skipped and
    counted in ``skipped_queries``.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    D = _prepare(query, gallery)

    def ranking(i, candidates=None):
        return _rank(
            query.sample_ids[i], query.labels[i], query.cameras[i], D[i],
            gallery.labels, gallery.cameras, candidates,
        )

    if protocol == "market":
        rankings = [ranking(i) for i in range(len(query))]
        cmc, mAP, skipped = _summarize(rankings, k_max, ap_mode)
        return EvalReport(cmc=cmc, map=mAP, n_queries=len(query), skipped_queries=skipped)

    rng = np.random.default_rng(seed)
    g_ids = np.unique(gallery.labels)
    per_repeat = []
    for _ in range(repeats):
        rankings = []
        for i in range(len(query)):
            eligible = ~((gallery.labels == query.labels[i]) & (gallery.cameras == query.cameras[i]))
            shot = []
            for lab in g_ids:
                pool = np.flatnonzero(eligible & (gallery.labels == lab))
                if pool.size:
                    shot.append(rng.choice(pool))
            rankings.append(ranking(i, np.asarray(shot, dtype=np.int64)))
        per_repeat.append(_summarize(rankings, k_max, ap_mode))
    cmc = np.array([math.fsum(col) / repeats for col in zip(*(p[0] for p in per_repeat))])
    mAP = math.fsum(p[1] for p in per_repeat) / repeats
    return EvalReport(
        cmc=cmc,
        map=mAP,
        repeats=repeats,
        n_queries=len(query),
        skipped_queries=per_repeat[0][2],
        per_repeat=[(p[0], p[1]) for p in per_repeat],
    )


def tta_average(variants):
    """Componentwise mean of feature vectors from augmented copies of a sample."""
    if len(variants) == 0:
        raise EmptyList("need at least one feature vector")
    arrs = [np.asarray(v, dtype=np.float64) for v in variants]
    if any(a.shape != arrs[0].shape for a in arrs):
        raise DimensionMismatch("feature variants have differing dimensions")
    if len(arrs) == 1:
        return arrs[0].copy()
    return np.mean(np.stack(arrs), axis=0)
