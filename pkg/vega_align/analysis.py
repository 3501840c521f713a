"""
vega-align - Patch-feature analysis

PCA images, K-means clusterings and pairwise ARI matrices over encoder
patch tokens. PCA and clustering are computed per image; ``analyze_encoders``
averages the per-image ARI matrices.
"""

from __future__ import annotations

import csv
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .dataset import SceneDataset
from .encoder import EncoderParams, encode
from .errors import ShapeError
from .rng import Xoshiro256, derive_seed
from .tensor import no_grad
from .tensor_io import write_ppm

logger = logging.getLogger("vega_align")

KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-9


# ─── PCA ──────────────────────────────────────────────────


@dataclass
class PcaResult:
    components: np.ndarray  # [k, d], orthonormal rows
    eigenvalues: np.ndarray  # [k], non-increasing
    mean: np.ndarray  # [d]
    projections: np.ndarray  # [N, k]
    total_variance: float

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    def reconstruct(self) -> np.ndarray:
        return self.mean + self.projections @ self.components


def pca(features: Any, k: int) -> PcaResult:
    """Top-k principal components of [N, d] features (sample covariance)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"pca expects [N, d] features, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise ValueError(f"pca needs at least 2 points, got {n}")
    if not 1 <= k <= min(n, d):
        raise ValueError(f"pca k={k} outside [1, {min(n, d)}] for {n} points of dim {d}")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals, kind="stable")[::-1][:k]
    components = eigvecs[:, order].T.copy()
    # largest-magnitude entry of every component is positive
    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(k), pivots])
    components *= np.where(signs == 0, 1.0, signs)[:, None]
    return PcaResult(
        components=components,
        eigenvalues=eigvals[order],
        mean=mean,
        projections=centered @ components.T,
        total_variance=float(np.trace(cov)),
    )


def pca_to_rgb(result: PcaResult, grid: int | None = None) -> np.ndarray:
    """Three projection channels min-max scaled to [0, 1] on the patch grid, [3, g, g]."""
    if result.k != 3:
        raise ValueError(f"pca_to_rgb needs k=3 components, got {result.k}")
    n = result.projections.shape[0]
    g = math.isqrt(n) if grid is None else grid
    if g * g != n:
        raise ShapeError(f"{n} patches do not form a square grid")
    proj = result.projections
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (proj - lo) / safe, 0.5)
    return scaled.T.reshape(3, g, g)


# ─── K-means ──────────────────────────────────────────────


@dataclass
class Clustering:
    labels: np.ndarray
    k: int
    inertia: float
    centroids: np.ndarray | None = None
    inertia_history: list[float] = field(default_factory=list)
    iterations: int = 0

    def __len__(self) -> int:
        return len(self.labels)


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp(x: np.ndarray, k: int, rng: Xoshiro256) -> np.ndarray:
    n = len(x)
    chosen = [rng.integers(0, n)]
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        total = float(d2.sum())
        if total <= 0.0:
            taken = set(chosen)
            idx = next(i for i in range(n) if i not in taken)
        else:
            cumulative = np.cumsum(d2)
            idx = int(np.searchsorted(cumulative, rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return x[chosen].copy()


def _lloyd_update(
    x: np.ndarray, labels: np.ndarray, own: np.ndarray, centroids: np.ndarray, iteration: int
) -> np.ndarray:
    """New centroids; an empty cluster takes the point farthest from its own centroid.

    Reseeding happens before the means, so a donor cluster's centroid is
    computed without the point it gave away. ``labels`` is updated in place.
    """
    k = len(centroids)
    own = own.copy()
    for c in range(k):
        if not (labels == c).any():
            far = int(np.argmax(own))
            logger.warning(
                f"kmeans: cluster {c} empty at iteration {iteration}, reseeding to point {far}"
            )
            labels[far] = c
            own[far] = -1.0
    updated = centroids.copy()
    for c in range(k):
        members = labels == c
        if members.any():
            updated[c] = x[members].mean(axis=0)
    return updated


def kmeans(
    features: Any,
    k: int,
    seed: int,
    max_iter: int = KMEANS_MAX_ITER,
    tol: float = KMEANS_TOL,
) -> Clustering:
    """k-means++ seeding then Lloyd iterations; ties go to the lowest cluster id."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"kmeans expects [N, d] features, got shape {x.shape}")
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"kmeans k={k} outside [1, {n}]")

    centroids = _kmeans_pp(x, k, Xoshiro256(seed))
    history: list[float] = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        dists = _sq_dists(x, centroids)
        labels = np.argmin(dists, axis=1)
        history.append(float(dists[np.arange(n), labels].sum()))

        updated = _lloyd_update(x, labels, dists[np.arange(n), labels], centroids, iterations)
        movement = float(np.max(np.linalg.norm(updated - centroids, axis=1)))
        centroids = updated
        if movement < tol:
            break

    dists = _sq_dists(x, centroids)
    labels = np.argmin(dists, axis=1)
    inertia = float(dists[np.arange(n), labels].sum())
    return Clustering(labels.astype(np.int64), k, inertia, centroids, history, iterations)


# ─── Adjusted Rand Index ──────────────────────────────────


def _labels(c: Clustering | Any) -> np.ndarray:
    return np.asarray(c.labels if isinstance(c, Clustering) else c)


def _pairs(counts: np.ndarray) -> float:
    return float(np.sum(counts * (counts - 1)) / 2.0)


def ari(a: Clustering | Any, b: Clustering | Any) -> float:
    """Adjusted Rand Index from the contingency table; 1.0 where the formula is 0/0."""
    la, lb = _labels(a), _labels(b)
    if la.shape != lb.shape or la.ndim != 1:
        raise ShapeError(f"ari: labelings have shapes {la.shape} and {lb.shape}")
    n = len(la)
    _, ia = np.unique(la, return_inverse=True)
    _, ib = np.unique(lb, return_inverse=True)
    table = np.zeros((ia.max(initial=-1) + 1, ib.max(initial=-1) + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)

    index = _pairs(table)
    sum_a = _pairs(table.sum(axis=1))
    sum_b = _pairs(table.sum(axis=0))
    total = n * (n - 1) / 2.0
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    denom = max_index - expected
    if denom == 0.0:
        return 1.0
    return (index - expected) / denom


def pairwise_ari_matrix(clusterings: Sequence[Clustering | Any]) -> np.ndarray:
    m = len(clusterings)
    out = np.eye(m, dtype=np.float64)
    for i in range(m):
        for j in range(i + 1, m):
            out[i, j] = out[j, i] = ari(clusterings[i], clusterings[j])
    return out


# ─── Encoder comparison ───────────────────────────────────


@dataclass
class AnalysisResult:
    names: list[str]
    ari_matrix: np.ndarray
    images: list[Path]
    num_images: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "names": self.names,
            "ari_matrix": self.ari_matrix.tolist(),
            "images": [str(p) for p in self.images],
            "num_images": self.num_images,
        }


def write_ari_csv(path: str | Path, names: Sequence[str], matrix: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(names)
        for row in matrix:
            writer.writerow([repr(float(v)) for v in row])


def analyze_encoders(
    encoders: Mapping[str, EncoderParams],
    dataset: SceneDataset,
    out_dir: str | Path,
    k: int = 5,
    num_images: int | None = None,
    seed: int = 0,
    block: int = -1,
) -> AnalysisResult:
    """
    For each image: PCA image and K-means labels of every encoder's patch
    tokens, then one ARI matrix between encoders. Matrices are averaged
    over images and written to ``ari_matrix.csv``.
    """
    if not encoders:
        raise ValueError("analyze_encoders needs at least one encoder")
    names = list(encoders)
    count = len(dataset) if num_images is None else min(num_images, len(dataset))
    out = Path(out_dir)
    written: list[Path] = []
    total = np.zeros((len(names), len(names)), dtype=np.float64)

    for i in range(count):
        image = dataset.images[i]
        clusterings = []
        for name in names:
            encoder = encoders[name]
            with no_grad():
                tokens = encode(image, encoder)[block].tokens.values
            rgb = pca_to_rgb(pca(tokens, 3), encoder.config.grid)
            p = encoder.config.patch_size
            path = out / f"pca_{name}_{i}.ppm"
            write_ppm(path, np.repeat(np.repeat(rgb, p, axis=1), p, axis=2))
            written.append(path)
            clusterings.append(kmeans(tokens, k, derive_seed(seed, "kmeans", i)))
        total += pairwise_ari_matrix(clusterings)

    matrix = total / max(count, 1)
    write_ari_csv(out / "ari_matrix.csv", names, matrix)
    logger.info(f"Analyzed {len(names)} encoders on {count} images (k={k})")
    return AnalysisResult(names, matrix, written, count)
