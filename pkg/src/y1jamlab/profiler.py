"""Traffic profiling: z-score normalization, DBSCAN and nearest-centroid inference.

Feature vectors are ``(cqi, mcs, bitrate_bps, bler_pct)`` in that order.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

FEATURES: tuple[str, ...] = ("cqi", "mcs", "bitrate_bps", "bler_pct")
# Y1 metric name for each feature, same order.
FEATURE_METRICS: tuple[str, ...] = ("dl_cqi", "dl_mcs", "dl_bitrate_bps", "dl_bler_pct")
SEMANTIC_ORDER: tuple[str, ...] = ("HIGH", "MEDIUM", "LOW", "IDLE")
IDLE_BITRATE_BPS = 1000.0
MODEL_VERSION = 1
NOISE = -1


class InsufficientData(ValueError):
    pass


class NoValidClusters(ValueError):
    pass


def as_matrix(X) -> np.ndarray:
    arr = np.asarray(X, dtype=float)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array of feature vectors")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature vectors must be finite")
    return arr


def features_from_metrics(metrics: Mapping[str, float]) -> np.ndarray | None:
    """Project a Y1 metrics dict onto the feature vector; None if incomplete."""
    try:
        return np.array([float(metrics[name]) for name in FEATURE_METRICS])
    except (KeyError, TypeError, ValueError):
        return None


@dataclass(frozen=True)
class Standardizer:
    mu: tuple[float, ...]
    sigma: tuple[float, ...]

    def transform(self, X) -> np.ndarray:
        arr = np.asarray(X, dtype=float)
        return (arr - np.asarray(self.mu)) / np.asarray(self.sigma)

    def inverse_transform(self, X_hat) -> np.ndarray:
        return np.asarray(X_hat, dtype=float) * np.asarray(self.sigma) + np.asarray(self.mu)


def fit_standardizer(X) -> Standardizer:
    """Per-feature mean and population std; near-zero std is replaced by 1."""
    arr = as_matrix(X)
    if arr.shape[0] < 2:
        raise InsufficientData(f"need at least 2 vectors, got {arr.shape[0]}")
    mu = arr.mean(axis=0)
    # A summed mean can miss an exactly constant column by an ulp.
    constant = np.ptp(arr, axis=0) == 0
    mu = np.where(constant, arr[0], mu)
    sigma = arr.std(axis=0)
    sigma = np.where(sigma < 1e-12, 1.0, sigma)
    return Standardizer(tuple(mu.tolist()), tuple(sigma.tolist()))


def dbscan(X_hat, eps: float, min_pts: int) -> list[int]:
    """Classic DBSCAN with closed Euclidean neighborhoods.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Clusters are numbered in the order their first core point
    appears in the input; border points join the first cluster that reaches
    them. Unreached points get -1.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = np.asarray(X_hat, dtype=float)
    n = len(pts)
    if n == 0:
        return []
    if pts.ndim == 1:
        pts = pts.reshape(n, -1)
    sq = np.sum(pts * pts, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * pts @ pts.T, 0.0)
    # Recompute borderline pairs exactly; the Gram-matrix form loses a few ulps.
    near = np.abs(d2 - eps * eps) <= 1e-9 * max(1.0, eps * eps)
    if near.any():
        ii, jj = np.nonzero(near)
        diff = pts[ii] - pts[jj]
        d2[ii, jj] = np.einsum("ij,ij->i", diff, diff)
    neighbors = [np.flatnonzero(row <= eps * eps) for row in d2]
    core = np.array([len(nb) >= min_pts for nb in neighbors])

    labels = [NOISE] * n
    visited = [False] * n
    cluster = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        visited[i] = True
        labels[i] = cluster
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in neighbors[p]:
                q = int(q)
                if labels[q] == NOISE:
                    labels[q] = cluster
                if core[q] and not visited[q]:
                    visited[q] = True
                    queue.append(q)
        cluster += 1
    return labels


def centroids(X_hat, labels: Sequence[int]) -> list[np.ndarray]:
    pts = np.asarray(X_hat, dtype=float)
    k = max(labels, default=NOISE) + 1
    if k == 0:
        raise NoValidClusters("every point was labeled noise")
    lab = np.asarray(labels)
    return [pts[lab == j].mean(axis=0) for j in range(k)]


def nearest(x_hat, cents: Sequence[np.ndarray]) -> int:
    # argmin returns the first minimum, giving the lowest-index tie-break.
    dists = [float(np.sum((np.asarray(x_hat) - c) ** 2)) for c in cents]
    return int(np.argmin(dists))


def label_clusters(X, labels: Sequence[int]) -> dict[int, str]:
    """Semantic label per cluster, ranked by raw-space mean bitrate.

    Clusters are ranked by descending mean bitrate and named HIGH, MEDIUM,
    LOW, IDLE in turn. With fewer than four clusters the lowest one is named
    IDLE whenever its mean bitrate is below 1 kbps.
    """
    arr = as_matrix(X)
    k = max(labels, default=NOISE) + 1
    if k == 0:
        raise NoValidClusters("every point was labeled noise")
    if k > len(SEMANTIC_ORDER):
        raise ValueError(f"{k} clusters cannot be mapped onto {len(SEMANTIC_ORDER)} labels")
    lab = np.asarray(labels)
    bitrate_col = FEATURES.index("bitrate_bps")
    means = [float(arr[lab == j, bitrate_col].mean()) for j in range(k)]
    ranked = sorted(range(k), key=lambda j: (-means[j], j))
    names = list(SEMANTIC_ORDER[:k])
    if k < len(SEMANTIC_ORDER) and means[ranked[-1]] < IDLE_BITRATE_BPS:
        names[-1] = "IDLE"
    return {j: name for j, name in zip(ranked, names)}


@dataclass
class ClusterModel:
    standardizer: Standardizer
    centroids: list[np.ndarray]
    labels_semantic: dict[int, str]
    eps: float
    min_pts: int
    cluster_sizes: list[int] = field(default_factory=list)
    noise_count: int = 0

    def __post_init__(self):
        if not self.centroids:
            raise NoValidClusters("model needs at least one centroid")
        assigned = list(self.labels_semantic.values())
        if len(set(assigned)) != len(assigned):
            raise ValueError("semantic labels must be distinct")

    @property
    def k(self) -> int:
        return len(self.centroids)

    def indices_for(self, semantic: str) -> set[int]:
        return {j for j, name in self.labels_semantic.items() if name == semantic.upper()}

    def to_json(self) -> str:
        doc = {
            "model_version": MODEL_VERSION,
            "features": list(FEATURES),
            "mu": list(self.standardizer.mu),
            "sigma": list(self.standardizer.sigma),
            "eps": self.eps,
            "min_pts": self.min_pts,
            "centroids": [c.tolist() for c in self.centroids],
            "labels_semantic": {str(j): name for j, name in sorted(self.labels_semantic.items())},
            "cluster_sizes": self.cluster_sizes,
            "noise_count": self.noise_count,
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ClusterModel":
        doc = json.loads(text)
        if doc.get("model_version") != MODEL_VERSION:
            raise ValueError(f"unsupported model_version {doc.get('model_version')!r}")
        return cls(
            standardizer=Standardizer(tuple(doc["mu"]), tuple(doc["sigma"])),
            centroids=[np.asarray(c, dtype=float) for c in doc["centroids"]],
            labels_semantic={int(j): name for j, name in doc["labels_semantic"].items()},
            eps=float(doc["eps"]),
            min_pts=int(doc["min_pts"]),
            cluster_sizes=list(doc.get("cluster_sizes", [])),
            noise_count=int(doc.get("noise_count", 0)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "ClusterModel":
        return cls.from_json(Path(path).read_text())


def classify(x, model: ClusterModel) -> int:
    """Index of the centroid nearest to the normalized feature vector."""
    return nearest(model.standardizer.transform(x), model.centroids)


def fit_model(X, eps: float = 0.30, min_pts: int = 10) -> ClusterModel:
    arr = as_matrix(X)
    scaler = fit_standardizer(arr)
    X_hat = scaler.transform(arr)
    labels = dbscan(X_hat, eps, min_pts)
    cents = centroids(X_hat, labels)
    lab = np.asarray(labels)
    return ClusterModel(
        standardizer=scaler,
        centroids=cents,
        labels_semantic=label_clusters(arr, labels),
        eps=eps,
        min_pts=min_pts,
        cluster_sizes=[int(np.sum(lab == j)) for j in range(len(cents))],
        noise_count=int(np.sum(lab == NOISE)),
    )


def eps_sweep(X, eps_values: Iterable[float], min_pts: int = 10) -> list[tuple[float, int, int]]:
    """(eps, cluster count, noise count) for each eps on the same data."""
    arr = as_matrix(X)
    X_hat = fit_standardizer(arr).transform(arr)
    rows = []
    for eps in eps_values:
        labels = dbscan(X_hat, eps, min_pts)
        rows.append((float(eps), max(labels, default=NOISE) + 1, labels.count(NOISE)))
    return rows


def read_training_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(FEATURES) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"training CSV missing columns: {sorted(missing)}")
        rows = [[float(row[f]) for f in FEATURES] for row in reader]
    return as_matrix(rows) if rows else np.empty((0, len(FEATURES)))


def write_training_csv(path: str | Path, X) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FEATURES)
        for row in np.asarray(X, dtype=float):
            writer.writerow([repr(float(v)) for v in row])


def bitrate_of(centroid_hat: np.ndarray, scaler: Standardizer) -> float:
    return float(scaler.inverse_transform(centroid_hat)[FEATURES.index("bitrate_bps")])
