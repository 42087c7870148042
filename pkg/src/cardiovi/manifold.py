"""Isomap embedding of the endocardium and its nearest-node inverse.

The endocardial vertices are linked into a k-nearest-neighbour graph,
graph shortest paths approximate geodesic distances, and classical MDS of
those distances gives 2D latent coordinates. The embedding has no inverse,
so latent points are mapped back to mesh vertices through a kd-tree lookup
over the finite set of embedded vertices.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import DisconnectionError, ParameterError, RankError
from .kdtree import KDTree


def pairwise_distances(points):
    p = np.asarray(points, dtype=float)
    diff = p[:, None, :] - p[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def knn_indices(points, k):
    """Row ``i`` lists the ``k`` nearest other points, ties to the lower index."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < 2 or not 1 <= k < n:
        raise ParameterError(f"need at least 2 points and 1 <= k < n (n={n}, k={k})")
    dist = pairwise_distances(points)
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k], dist


def knn_graph(points, k):
    """Symmetrised k-nearest-neighbour graph weighted by euclidean distance.

    An edge is kept when either endpoint lists the other among its ``k``
    nearest points; equal distances favour the lower vertex index.
    Returns a symmetric CSR matrix.
    """
    nbrs, dist = knn_indices(points, k)
    n = len(dist)
    rows = np.repeat(np.arange(n), k)
    cols = nbrs.ravel()
    mask = np.zeros((n, n), dtype=bool)
    mask[rows, cols] = True
    mask |= mask.T
    i, j = np.nonzero(mask)
    graph = csr_matrix((dist[i, j], (i, j)), shape=(n, n))
    ncomp, labels = connected_components(graph, directed=False)
    if ncomp > 1:
        raise DisconnectionError(np.bincount(labels).tolist())
    return graph


def geodesic_distances(graph):
    """All-pairs shortest-path lengths of a connected, positively weighted graph."""
    d = dijkstra(graph, directed=False)
    if not np.all(np.isfinite(d)):
        _, labels = connected_components(graph, directed=False)
        raise DisconnectionError(np.bincount(labels).tolist())
    # the two directions of an undirected path can differ by roundoff
    return np.minimum(d, d.T)


def isomap_embed(distances, dim=2):
    """Classical MDS of a distance matrix.

    Returns ``(coords, eigenvalues)`` where ``coords`` holds the top ``dim``
    eigenvectors of ``-1/2 J D^2 J`` scaled by the root of their
    eigenvalues. Each eigenvector's first non-negligible entry is made
    positive so the output is deterministic.
    """
    d = np.asarray(distances, dtype=float)
    n = len(d)
    if d.shape != (n, n) or dim < 1 or dim > n - 1:
        raise ParameterError(f"need a square matrix and 1 <= dim <= n-1 (n={n}, dim={dim})")
    d2 = d * d
    # double centering without forming J explicitly
    b = -0.5 * (d2 - d2.mean(axis=0)[None, :] - d2.mean(axis=1)[:, None] + d2.mean())
    b = 0.5 * (b + b.T)
    w, v = np.linalg.eigh(b)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    tol = max(1e-12, 1e-10 * abs(w[0]))
    if np.count_nonzero(w[:dim] > tol) < dim:
        raise RankError(f"only {np.count_nonzero(w > tol)} positive eigenvalues, need {dim}")
    coords = v[:, :dim] * np.sqrt(w[:dim])
    for c in range(dim):
        col = v[:, c]
        first = np.flatnonzero(np.abs(col) > 1e-10 * np.abs(col).max())[0]
        if col[first] < 0:
            coords[:, c] = -coords[:, c]
    return coords, w


@dataclass(frozen=True, eq=False)
class ManifoldEmbedding:
    """Latent coordinates for a subset of mesh vertices plus their lookup tree."""

    vertex_ids: np.ndarray
    latent: np.ndarray
    eigenvalues: np.ndarray = field(default=None, repr=False)
    tree: KDTree = field(init=False, repr=False)
    bounds: tuple = field(init=False)

    def __post_init__(self):
        ids = np.array(self.vertex_ids, dtype=np.int64)
        lat = np.array(self.latent, dtype=float)
        if lat.ndim != 2 or len(lat) != len(ids) or len(ids) == 0:
            raise ParameterError("need one latent point per vertex id")
        ids.setflags(write=False)
        lat.setflags(write=False)
        object.__setattr__(self, "vertex_ids", ids)
        object.__setattr__(self, "latent", lat)
        object.__setattr__(self, "tree", KDTree(lat))
        object.__setattr__(self, "bounds", (lat.min(axis=0), lat.max(axis=0)))

    @property
    def dim(self):
        return self.latent.shape[1]

    def nearest_slot(self, z):
        lo, hi = self.bounds
        z = np.clip(np.asarray(z, dtype=float), lo, hi)
        return self.tree.query(z)[0]


def embed_endocardium(mesh, k=16, dim=2):
    """Isomap of the mesh's endocardial vertices."""
    ids = mesh.endocardial
    pts = mesh.vertices[ids]
    coords, w = isomap_embed(geodesic_distances(knn_graph(pts, k)), dim)
    return ManifoldEmbedding(ids, coords, w)


def nearest_node(emb, z):
    """Mesh vertex whose latent point is closest to ``z`` (clamped to the bounds)."""
    return int(emb.vertex_ids[emb.nearest_slot(z)])


class Reconstruction(NamedTuple):
    mean_error_mm: float
    identity_fraction: float


def reconstruction_error(emb, mesh):
    """Round-trip each embedded vertex through its own latent coordinate."""
    mapped = np.array([nearest_node(emb, z) for z in emb.latent])
    err = np.linalg.norm(mesh.vertices[mapped] - mesh.vertices[emb.vertex_ids], axis=1)
    return Reconstruction(float(err.mean()), float(np.mean(mapped == emb.vertex_ids)))


def stress(geodesic, latent):
    """RMS mismatch between geodesic and latent distances, relative to RMS geodesic."""
    g = np.asarray(geodesic)
    l = pairwise_distances(latent)
    iu = np.triu_indices(len(g), 1)
    return float(np.sqrt(np.mean((g[iu] - l[iu]) ** 2)) / np.sqrt(np.mean(g[iu] ** 2)))


def embedding_csv(emb):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["vertex_id"] + [f"z{c + 1}" for c in range(emb.dim)])
    for vid, z in zip(emb.vertex_ids, emb.latent):
        w.writerow([int(vid)] + [repr(float(v)) for v in z])
    return buf.getvalue()


def read_embedding_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise ParameterError("embedding CSV has no data rows")
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return ManifoldEmbedding(data[:, 0].astype(np.int64), data[:, 1:])
