"""Neighbourhood graph of the embedded deformation model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

DEFAULT_NEIGHBORS = 10


@dataclass(frozen=True, eq=False)
class GraphNeighborhood:
    """Directed edges ``src -> dst`` with per-edge weights.

    For every vertex j the edges with ``src == j`` list N(j), and their
    ``gamma`` values sum to one.
    """

    src: np.ndarray
    dst: np.ndarray
    gamma: np.ndarray
    n_vertices: int

    def neighbors(self, j: int) -> np.ndarray:
        return self.dst[self.src == j]

    def weights(self, j: int) -> np.ndarray:
        return self.gamma[self.src == j]


def _gaussian_weights(vertices, src, dst, n) -> np.ndarray:
    d2 = np.sum((vertices[dst] - vertices[src]) ** 2, axis=1)
    sigma = np.sqrt(d2).mean()
    g = np.exp(-d2 / (2.0 * sigma**2))
    total = np.bincount(src, weights=g, minlength=n)
    return g / total[src]


def build_neighborhood(vertices, k: int = DEFAULT_NEIGHBORS) -> GraphNeighborhood:
    """k-nearest-neighbour graph in the rest pose with Gaussian falloff.

    gamma_jk = exp(-|v_k - v_j|^2 / (2 sigma^2)) normalised per vertex, with
    sigma the mean length of all kNN edges.
    """
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    kk = min(k, n - 1)
    if kk < 1:
        raise ValueError("need at least two vertices for a deformation graph")
    _, nn = cKDTree(v).query(v, k=kk + 1)
    src = np.repeat(np.arange(n), kk)
    dst = np.empty(n * kk, dtype=np.intp)
    # drop self; duplicated vertices could put self anywhere in the list
    for j in range(n):
        row = [i for i in nn[j] if i != j][:kk]
        dst[j * kk:(j + 1) * kk] = row
    return GraphNeighborhood(src, dst, _gaussian_weights(v, src, dst, n), n)


def chain_neighborhood(vertices) -> GraphNeighborhood:
    """Neighbours are the adjacent joints of a chain."""
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    i = np.arange(n - 1)
    src = np.concatenate([i, i + 1])
    dst = np.concatenate([i + 1, i])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    return GraphNeighborhood(src, dst, _gaussian_weights(v, src, dst, n), n)
