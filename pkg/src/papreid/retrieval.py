"""Occlusion-aware query/gallery distance, ranking metrics and part similarity analysis."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

# Fixed query block size: the work split never depends on the worker count,
# so every entry is produced by the same BLAS call shape on any schedule.
QUERY_BLOCK = 128


@dataclass(frozen=True, eq=False)
class EmbeddingSet:
    """Per-part embeddings of one image (P x d) with visibility and labels."""

    parts: np.ndarray
    visible: np.ndarray
    person_id: int | None = None
    camera_id: int | None = None

    def __post_init__(self):
        parts = np.asarray(self.parts, dtype=np.float64)
        visible = np.asarray(self.visible, dtype=bool)
        if parts.ndim != 2:
            raise ValueError(f"embeddings must be P x d, got shape {parts.shape}")
        if visible.shape != (parts.shape[0],):
            raise ValueError("visibility length must equal the part count")
        if not np.all(np.isfinite(parts)):
            raise ValueError("embeddings contain NaN or Inf")
        parts = np.array(parts, order="C", copy=True)
        parts.setflags(write=False)
        visible = visible.copy()
        visible.setflags(write=False)
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "visible", visible)

    @property
    def num_parts(self) -> int:
        return self.parts.shape[0]

    @property
    def dim(self) -> int:
        return self.parts.shape[1]


def cos_dist(a: Sequence[float], b: Sequence[float]) -> float:
    """1 - cosine similarity, in [0, 2]; 1 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    sim = float(np.dot(a, b) / (na * nb))
    return 1.0 - min(1.0, max(-1.0, sim))


def query_gallery_distance(q: EmbeddingSet, g: EmbeddingSet) -> float:
    """Mean part cosine distance over the parts visible in the query.

    Gallery visibility is ignored: an invisible gallery part still carries its
    embedding of the zero vector.
    """
    if q.parts.shape != g.parts.shape:
        raise ValueError(f"embedding shapes differ: {q.parts.shape} vs {g.parts.shape}")
    n_vis = int(q.visible.sum())
    if n_vis == 0:
        raise ValueError("query has no visible part")
    total = 0.0
    for p in np.flatnonzero(q.visible):
        total += cos_dist(q.parts[p], g.parts[p])
    return total / n_vis


def _unit_parts(sets: Sequence[EmbeddingSet]) -> np.ndarray:
    """Stack to (n, P, d) with each part L2-normalized; zero-norm parts stay zero."""
    x = np.stack([s.parts for s in sets])
    norms = np.linalg.norm(x, axis=2, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def distance_matrix(
    queries: Sequence[EmbeddingSet],
    gallery: Sequence[EmbeddingSet],
    threads: int = 1,
) -> np.ndarray:
    """Q x N matrix of ``query_gallery_distance`` values (float64).

    Query part vectors are scaled by v_p / sum(v) so that one matrix product
    over the concatenated parts gives the weighted mean similarity.
    """
    if not queries or not gallery:
        return np.zeros((len(queries), len(gallery)))
    shape = queries[0].parts.shape
    for s in list(queries) + list(gallery):
        if s.parts.shape != shape:
            raise ValueError(f"embedding shape {s.parts.shape} differs from {shape}")
    vis = np.stack([q.visible for q in queries]).astype(np.float64)
    n_vis = vis.sum(axis=1)
    if np.any(n_vis == 0):
        bad = int(np.flatnonzero(n_vis == 0)[0])
        raise ValueError(f"query {bad} has no visible part")
    weights = vis / n_vis[:, None]
    qx = (_unit_parts(queries) * weights[:, :, None]).reshape(len(queries), -1)
    gx = np.ascontiguousarray(_unit_parts(gallery).reshape(len(gallery), -1).T)
    out = np.empty((len(queries), len(gallery)))

    def run(start: int) -> None:
        stop = min(start + QUERY_BLOCK, len(queries))
        out[start:stop] = 1.0 - qx[start:stop] @ gx

    starts = range(0, len(queries), QUERY_BLOCK)
    with threadpool_limits(limits=1, user_api="blas"):
        if threads <= 1:
            for s in starts:
                run(s)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run, starts))
    np.clip(out, 0.0, 2.0, out=out)
    return out


@dataclass
class EvalResult:
    cmc: np.ndarray
    mAP: float
    num_queries: int
    num_skipped: int
    ap: np.ndarray = field(repr=False, default=None)

    def rank(self, k: int) -> float:
        if len(self.cmc) == 0:
            return 0.0
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    def report(self) -> dict:
        return {
            "rank1": self.rank(1),
            "rank5": self.rank(5),
            "rank10": self.rank(10),
            "mAP": self.mAP,
            "num_queries": self.num_queries,
            "num_skipped": self.num_skipped,
        }


def _query_ranking(dist_row, q_pid, q_cam, g_pids, g_cams):
    order = np.argsort(dist_row, kind="stable")
    pids = g_pids[order]
    cams = g_cams[order]
    junk = (pids == q_pid) & (cams == q_cam)
    keep = ~junk
    matches = (pids[keep] == q_pid) & (pids[keep] > 0)
    return matches, pids[keep]


def average_precision(matches: np.ndarray) -> float:
    hits = np.flatnonzero(matches)
    if hits.size == 0:
        return 0.0
    return float(np.mean(np.arange(1, hits.size + 1) / (hits + 1)))


def evaluate(
    dists: np.ndarray,
    query_ids: Sequence[int],
    query_cams: Sequence[int],
    gallery_ids: Sequence[int],
    gallery_cams: Sequence[int],
    max_rank: int = 50,
    single_shot: bool = False,
) -> EvalResult:
    """CMC and mAP under the Market-1501 protocol.

    Gallery items sharing both identity and camera with the query are junk
    and removed. Gallery ids <= 0 are distractors: ranked, never matched.
    Queries without any valid match are skipped and counted. With
    ``single_shot``, the CMC is computed on the ranked list keeping only the
    first occurrence of each gallery identity; mAP is unaffected.
    """
    dists = np.asarray(dists, dtype=np.float64)
    q_pids = np.asarray(query_ids)
    q_cams = np.asarray(query_cams)
    g_pids = np.asarray(gallery_ids)
    g_cams = np.asarray(gallery_cams)
    num_q, num_g = dists.shape
    if len(q_pids) != num_q or len(q_cams) != num_q:
        raise ValueError("query labels do not match distance matrix rows")
    if len(g_pids) != num_g or len(g_cams) != num_g:
        raise ValueError("gallery labels do not match distance matrix columns")
    max_rank = min(max_rank, num_g)
    cmcs, aps = [], []
    skipped = 0
    for i in range(num_q):
        matches, pids = _query_ranking(dists[i], q_pids[i], q_cams[i], g_pids, g_cams)
        if not matches.any():
            skipped += 1
            continue
        aps.append(average_precision(matches))
        cmc_matches = matches
        if single_shot:
            _, first = np.unique(pids, return_index=True)
            keep = np.zeros(len(pids), dtype=bool)
            keep[first] = True
            cmc_matches = matches[keep]
        first_hit = int(np.argmax(cmc_matches))
        curve = np.zeros(max_rank)
        curve[first_hit:] = 1.0
        cmcs.append(curve)
    if not aps:
        raise ValueError("no query has a valid match in the gallery")
    return EvalResult(
        cmc=np.mean(cmcs, axis=0),
        mAP=float(np.mean(aps)),
        num_queries=len(aps),
        num_skipped=skipped,
        ap=np.asarray(aps),
    )


def part_similarity_matrix(feature_sets: Sequence, P: int | None = None) -> np.ndarray:
    """Average P x P cosine similarity between an image's own part features.

    Each off-diagonal entry averages over images where both parts are
    visible (non-zero); pairs never co-visible score 0. The diagonal is 1.
    """
    if not feature_sets:
        raise ValueError("need at least one feature set")
    parts = np.stack([np.asarray(f.parts, dtype=np.float64) for f in feature_sets])
    if P is not None and parts.shape[1] != P:
        raise ValueError(f"expected {P} parts, got {parts.shape[1]}")
    norms = np.linalg.norm(parts, axis=2, keepdims=True)
    ok = norms[:, :, 0] > 0
    unit = np.divide(parts, norms, out=np.zeros_like(parts), where=norms > 0)
    sims = np.einsum("npc,nqc->pq", unit, unit)
    counts = np.einsum("np,nq->pq", ok.astype(np.float64), ok.astype(np.float64))
    out = np.divide(sims, counts, out=np.zeros_like(sims), where=counts > 0)
    out = (out + out.T) / 2.0
    np.fill_diagonal(out, 1.0)
    return out
