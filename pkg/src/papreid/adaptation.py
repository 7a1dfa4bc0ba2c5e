"""Pseudo identity labels for an unlabeled domain via DBSCAN on a precomputed distance matrix."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data_model import ManifestEntry

NOISE = -1
DEFAULT_PERCENTILE = 0.16
DEFAULT_MIN_PTS = 4


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    labels: np.ndarray
    eps: float
    min_pts: int

    @property
    def num_clusters(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size and self.labels.max() >= 0 else 0

    @property
    def num_noise(self) -> int:
        return int(np.sum(self.labels == NOISE))


def _check_square(dists: np.ndarray) -> np.ndarray:
    d = np.asarray(dists, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise ValueError(f"distance matrix must be square, got shape {d.shape}")
    if not np.all(np.isfinite(d)):
        raise ValueError("distance matrix contains NaN or Inf")
    return d


def symmetrize(dists: np.ndarray) -> np.ndarray:
    """(D + D^T) / 2 with a zero diagonal."""
    d = _check_square(dists)
    s = (d + d.T) / 2.0
    np.fill_diagonal(s, 0.0)
    return s


def estimate_eps(dists: np.ndarray, percentile: float = DEFAULT_PERCENTILE) -> float:
    """Percentile (0-100 scale, linear interpolation) of the strict upper triangle."""
    d = _check_square(dists)
    if d.shape[0] < 2:
        raise ValueError("need at least a 2 x 2 matrix")
    if not 0 < percentile < 100:
        raise ValueError(f"percentile must lie in (0, 100), got {percentile}")
    upper = d[np.triu_indices(d.shape[0], k=1)]
    return float(np.percentile(upper, percentile))


def dbscan(dists: np.ndarray, eps: float, min_pts: int = DEFAULT_MIN_PTS) -> ClusterAssignment:
    """Density clustering on a precomputed symmetric distance matrix.

    Neighbors are points within ``eps`` (inclusive), the point itself
    counted. Clusters are numbered in the order their first core point
    appears; a border point reachable from several clusters keeps the
    lowest cluster id.
    """
    d = _check_square(dists)
    if np.any(d < 0):
        raise ValueError("distance matrix has negative entries")
    if not np.allclose(d, d.T, rtol=0.0, atol=1e-9):
        raise ValueError("distance matrix is not symmetric")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be at least 1")
    n = d.shape[0]
    adjacency = d <= eps
    np.fill_diagonal(adjacency, True)
    neighbors = [np.flatnonzero(row) for row in adjacency]
    core = np.array([len(nb) >= min_pts for nb in neighbors], dtype=bool)
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in neighbors[j]:
                if labels[k] != NOISE:
                    continue
                labels[k] = cluster
                if core[k]:
                    queue.append(k)
        cluster += 1
    return ClusterAssignment(labels, float(eps), int(min_pts))


def pseudo_label_manifest(
    entries: Sequence[ManifestEntry],
    assignment: ClusterAssignment,
) -> list[ManifestEntry]:
    """Drop noise samples; cluster ids become person ids on the train split."""
    if len(entries) != len(assignment.labels):
        raise ValueError(f"{len(entries)} entries but {len(assignment.labels)} cluster labels")
    return [
        replace(e, person_id=int(lab), split="train")
        for e, lab in zip(entries, assignment.labels)
        if lab != NOISE
    ]
