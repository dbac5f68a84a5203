"""Intensity-only K-means over a volume: the baseline segmentation.

Features are the raw 1D voxel intensities; no spatial coordinates enter the
distance, which reproduces the known failure mode where different organs of
similar density share a cluster.  Everything is deterministic: percentile
initialization, lowest-index tie-breaks, and a canonical relabeling by
ascending centroid.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EmptyClusterCollapsed, KTooLarge
from .volume import Volume3D


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray  # (nz, ny, nx) ints in [0, k)
    centroids: np.ndarray  # (k,) ascending
    iterations: int
    converged: bool


def init_centroids(vol: Volume3D, k: int) -> np.ndarray:
    """Deterministic seeds at the intensity percentiles 100*(j+0.5)/k."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    values = vol.voxels.ravel()
    if len(np.unique(values)) < k:
        raise KTooLarge(f"k={k} exceeds {len(np.unique(values))} distinct intensities")
    qs = [100.0 * (j + 0.5) / k for j in range(k)]
    return np.percentile(values.astype(np.float64), qs)


def _assign(values: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # argmin breaks ties toward the lower centroid index
    dist = np.abs(values[:, None] - centroids[None, :])
    return dist.argmin(axis=1)


def kmeans_segment(vol: Volume3D, k: int, max_iter: int = 100, tol: float = 0.0) -> KMeansResult:
    """Lloyd iterations on voxel intensities.

    Stops when assignments no longer change, when the largest centroid
    movement drops to tol, or after max_iter rounds.  An emptied cluster is
    re-seeded to the intensity farthest from its nearest live centroid and
    reported as an EmptyClusterCollapsed warning.
    """
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    centroids = init_centroids(vol, k).astype(np.float64)
    values = vol.voxels.ravel().astype(np.float64)

    labels = _assign(values, centroids)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        sums = np.bincount(labels, weights=values, minlength=k)
        counts = np.bincount(labels, minlength=k)
        new_centroids = centroids.copy()
        nonempty = counts > 0
        new_centroids[nonempty] = sums[nonempty] / counts[nonempty]
        for j in np.flatnonzero(~nonempty):
            dist = np.abs(values[:, None] - new_centroids[None, :]).min(axis=1)
            new_centroids[j] = values[dist.argmax()]
            warnings.warn(f"cluster {j} emptied; re-seeded", EmptyClusterCollapsed)

        new_labels = _assign(values, new_centroids)
        shift = float(np.abs(new_centroids - centroids).max())
        centroids = new_centroids
        if np.array_equal(new_labels, labels) or shift <= tol:
            labels = new_labels
            converged = True
            break
        labels = new_labels

    # canonical form: label 0 is the darkest cluster
    order = np.argsort(centroids, kind="stable")
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    labels = remap[labels]
    centroids = centroids[order]

    return KMeansResult(
        labels=labels.reshape(vol.voxels.shape),
        centroids=centroids,
        iterations=iterations,
        converged=converged,
    )


def wcss(values: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    """Within-cluster sum of squared distances (diagnostic for monotonicity checks)."""
    v = np.asarray(values, dtype=np.float64).ravel()
    l = np.asarray(labels).ravel()
    return float(((v - np.asarray(centroids, dtype=np.float64)[l]) ** 2).sum())
