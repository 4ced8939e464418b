"""Latent-structure analysis of a trained model.

Knowledge-growth curves averaged over students, spectral clustering of
students (rows of S) and of materials (columns of the per-view concept
maps), and the rank correlation between learned material biases and
observed average scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import spearmanr
from sklearn.cluster import KMeans

from .data import Dataset
from .errors import ConfigError, DegenerateInputError
from .model import ModelParams, knowledge


@dataclass
class ClusterAssignment:
    item_ids: list
    labels: np.ndarray
    num_clusters: int
    affinity: str = "cosine"


def knowledge_curves(params: ModelParams, concepts=None, students=None) -> np.ndarray:
    """Mean knowledge level per concept per attempt over selected students.

    Returns an array of shape (num selected concepts, num attempts),
    rows ordered as in ``concepts`` (default: all concepts).
    """
    k = knowledge(params)
    if students is None:
        students = np.arange(k.shape[0])
    if concepts is None:
        concepts = np.arange(k.shape[1])
    students = np.asarray(students, dtype=int)
    concepts = np.asarray(concepts, dtype=int)
    if students.size == 0 or concepts.size == 0:
        raise ConfigError("empty student or concept selection")
    return k[np.ix_(students, concepts)].mean(axis=0)


def cosine_affinity(features: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity, clamped at 0."""
    f = np.asarray(features, dtype=float)
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    sim = (f / norms) @ (f / norms).T
    return np.maximum(sim, 0.0)


def spectral_cluster(features: np.ndarray, k: int, seed: int = 0) -> ClusterAssignment:
    """Spectral clustering with cosine affinity and normalized Laplacian."""
    features = np.asarray(features, dtype=float)
    if k < 2:
        raise ConfigError("need k >= 2 clusters")
    if features.shape[0] < k:
        raise ConfigError("fewer rows than clusters")
    if np.allclose(features, features[0], atol=1e-12):
        raise DegenerateInputError("all feature rows are identical")
    affinity = cosine_affinity(features)
    deg = affinity.sum(axis=1)
    d_inv_sqrt = 1.0 / np.sqrt(np.maximum(deg, 1e-12))
    lap = np.eye(len(deg)) - d_inv_sqrt[:, None] * affinity * d_inv_sqrt[None, :]
    eigvals, eigvecs = np.linalg.eigh(lap)
    embed = eigvecs[:, np.argsort(eigvals)[:k]]
    row_norms = np.linalg.norm(embed, axis=1, keepdims=True)
    row_norms[row_norms == 0] = 1.0
    embed = embed / row_norms
    km = KMeans(n_clusters=k, n_init=10, max_iter=100, random_state=seed)
    labels = km.fit_predict(embed)
    return ClusterAssignment(
        item_ids=list(range(features.shape[0])),
        labels=labels,
        num_clusters=k,
        affinity="cosine (normalized Laplacian embedding)",
    )


def material_clusters(
    params: ModelParams, views, k: int, seed: int = 0
) -> ClusterAssignment:
    """Cluster materials by their concept columns across the given views.

    Feature rows are the per-material concept vectors of every selected
    view, stacked along the material axis; item ids are (view, material)
    pairs in stacking order.
    """
    views = list(views)
    if not views:
        raise ConfigError("no views selected")
    rows = []
    ids = []
    for r in views:
        if r not in params.Q:
            raise ConfigError(f"unknown view {r}")
        q = params.Q[r]
        for p in range(q.shape[1]):
            rows.append(q[:, p])
            ids.append((r, p))
    assignment = spectral_cluster(np.array(rows), k, seed)
    assignment.item_ids = ids
    return assignment


def bias_score_correlation(params: ModelParams, ds: Dataset, view: int) -> float:
    """Spearman correlation of learned material bias vs. mean observed score."""
    if not ds.view(view).graded:
        raise ConfigError(f"view {view} is not graded")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for rec in ds.records:
        if rec.view != view:
            continue
        sums[rec.material] = sums.get(rec.material, 0.0) + rec.value
        counts[rec.material] = counts.get(rec.material, 0) + 1
    materials = sorted(sums)
    if len(materials) < 3:
        raise ConfigError("need at least 3 materials with observations")
    mean_scores = [sums[p] / counts[p] for p in materials]
    biases = [params.b_p[view][p] for p in materials]
    rho, _ = spearmanr(biases, mean_scores)
    return float(rho)
