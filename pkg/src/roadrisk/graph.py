"""Spatial graph construction from accident point clouds.

Accident locations are grouped on a square grid (local equirectangular
projection around the region centroid); each occupied cell becomes a node at
the mean position of its members. Nodes are linked to their k nearest
neighbors with Gaussian kernel weights over haversine distance, symmetrized,
and normalized as D^-1/2 A D^-1/2 for stable iterative smoothing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import DegenerateGeometryError, EmptyInputError, ZeroDegreeNodeError

EARTH_RADIUS_M = 6_371_000.0


def haversine_m(lon1: float, lat1: float, lon2: float, lat2: float) -> float:
    """Great-circle distance in meters between two lon/lat points (degrees)."""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def pairwise_haversine_m(lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
    """Dense symmetric distance matrix (meters) for small point sets."""
    phi = np.radians(np.asarray(lats, dtype=float))
    lam = np.radians(np.asarray(lons, dtype=float))
    dphi = phi[:, None] - phi[None, :]
    dlam = lam[:, None] - lam[None, :]
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi)[:, None] * np.cos(phi)[None, :] * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(a)))


@dataclass
class GraphParams:
    cell_size_m: float = 150.0
    k: int = 4
    sigma_m: float | None = None  # None: median of retained kNN distances

    def to_dict(self) -> dict:
        return {"cell_size_m": self.cell_size_m, "k": self.k, "sigma_m": self.sigma_m}


@dataclass
class SpatialGraph:
    node_ids: list[int]
    lons: np.ndarray
    lats: np.ndarray
    member_counts: np.ndarray
    adjacency: sparse.csr_matrix       # symmetric, zero diagonal
    adjacency_norm: sparse.csr_matrix  # D^-1/2 A D^-1/2
    params: GraphParams = field(default_factory=GraphParams)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def edge_counts(self) -> dict:
        """Stored (directed) entries and undirected pair count."""
        directed = self.adjacency.nnz
        return {"directed": directed, "undirected": directed // 2}

    def dense_norm(self) -> np.ndarray:
        return self.adjacency_norm.toarray()


def _local_xy_m(lons, lats, lon0: float, lat0: float) -> tuple[np.ndarray, np.ndarray]:
    # equirectangular projection about (lon0, lat0); adequate at city scale
    x = np.radians(np.asarray(lons, dtype=float) - lon0) * EARTH_RADIUS_M * math.cos(math.radians(lat0))
    y = np.radians(np.asarray(lats, dtype=float) - lat0) * EARTH_RADIUS_M
    return x, y


def assign_to_nodes(
    lons: Sequence[float],
    lats: Sequence[float],
    cell_size_m: float = 150.0,
    center: tuple[float, float] | None = None,
) -> tuple[list[tuple[int, float, float, int]], np.ndarray]:
    """Group points into grid cells; each occupied cell becomes a node.

    The grid is anchored at `center` (lon, lat) - normally the study-region
    centroid, so cell boundaries don't move with the data - falling back to
    the point-cloud mean. Returns (nodes, assignment): nodes as (node_id,
    centroid_lon, centroid_lat, member_count) ordered by node_id, and a
    per-point array of node ids. Node ids are assigned in (cell_x, cell_y)
    order, so the result is deterministic for a given input set.
    """
    lons = np.asarray(lons, dtype=float)
    lats = np.asarray(lats, dtype=float)
    if lons.size == 0:
        raise EmptyInputError("no points to assign")
    if center is not None:
        lon0, lat0 = float(center[0]), float(center[1])
    else:
        lon0, lat0 = float(lons.mean()), float(lats.mean())
    x, y = _local_xy_m(lons, lats, lon0, lat0)
    cx = np.floor(x / cell_size_m).astype(np.int64)
    cy = np.floor(y / cell_size_m).astype(np.int64)
    cells = {}
    for i, key in enumerate(zip(cx.tolist(), cy.tolist())):
        cells.setdefault(key, []).append(i)
    nodes = []
    assignment = np.empty(lons.size, dtype=np.int64)
    for node_id, key in enumerate(sorted(cells)):
        members = cells[key]
        nodes.append(
            (
                node_id,
                float(lons[members].mean()),
                float(lats[members].mean()),
                len(members),
            )
        )
        assignment[members] = node_id
    return nodes, assignment


def _merge_coincident(lons: np.ndarray, lats: np.ndarray, counts: np.ndarray):
    """Merge nodes with exactly equal coordinates (keeps kernel weights < 1 off-diagonal)."""
    seen: dict[tuple[float, float], int] = {}
    keep, merged_counts = [], []
    remap = np.empty(lons.size, dtype=np.int64)
    for i in range(lons.size):
        key = (float(lons[i]), float(lats[i]))
        if key in seen:
            j = seen[key]
            merged_counts[j] += counts[i]
            remap[i] = j
        else:
            seen[key] = len(keep)
            remap[i] = len(keep)
            keep.append(i)
            merged_counts.append(int(counts[i]))
    return np.array(keep, dtype=np.int64), np.array(merged_counts), remap


def build_adjacency(
    lons: np.ndarray,
    lats: np.ndarray,
    k: int,
    sigma_m: float | None = None,
) -> tuple[sparse.csr_matrix, float]:
    """Gaussian-kernel kNN adjacency, symmetrized with elementwise max.

    Entry (i, j) is exp(-d_ij^2 / (2 sigma^2)) when j is among i's k nearest
    neighbors (self excluded; distance ties broken by ascending node id).
    Returns (A, sigma) where sigma is the bandwidth actually used.
    """
    n = lons.size
    if not (n > k >= 1):
        raise DegenerateGeometryError(f"need n > k >= 1, got n={n}, k={k}")
    d = pairwise_haversine_m(lons, lats)
    if (d[~np.eye(n, dtype=bool)] == 0.0).any():
        raise DegenerateGeometryError("coincident nodes present; merge them first")
    # argsort on (distance, node_id) keys: stable sort over id-ordered columns
    d_search = d.copy()
    np.fill_diagonal(d_search, np.inf)
    order = np.argsort(d_search, axis=1, kind="stable")
    neighbors = order[:, :k]
    knn_d = np.take_along_axis(d, neighbors, axis=1)
    if sigma_m is None:
        sigma_m = float(np.median(knn_d))
    if sigma_m <= 0:
        raise DegenerateGeometryError("sigma must be positive")
    weights = np.exp(-(knn_d**2) / (2.0 * sigma_m**2))
    rows = np.repeat(np.arange(n), k)
    a = sparse.coo_matrix(
        (weights.ravel(), (rows, neighbors.ravel())), shape=(n, n)
    ).tocsr()
    a = a.maximum(a.T)
    a.setdiag(0.0)
    a.eliminate_zeros()
    return a, sigma_m


def normalize_sym(a: sparse.csr_matrix) -> sparse.csr_matrix:
    """D^-1/2 A D^-1/2; every node must have positive degree."""
    degrees = np.asarray(a.sum(axis=1)).ravel()
    zero = np.flatnonzero(degrees <= 0.0)
    if zero.size:
        raise ZeroDegreeNodeError(int(zero[0]))
    inv_sqrt = sparse.diags(1.0 / np.sqrt(degrees))
    return (inv_sqrt @ a @ inv_sqrt).tocsr()


def build_graph(
    lons: Sequence[float],
    lats: Sequence[float],
    params: GraphParams | None = None,
    center: tuple[float, float] | None = None,
) -> tuple[SpatialGraph, np.ndarray]:
    """Full pipeline: grid nodes, kNN kernel adjacency, normalization.

    Returns the graph plus the per-input-point node assignment.
    """
    params = params or GraphParams()
    nodes, assignment = assign_to_nodes(lons, lats, params.cell_size_m, center)
    node_lons = np.array([n[1] for n in nodes])
    node_lats = np.array([n[2] for n in nodes])
    counts = np.array([n[3] for n in nodes])
    keep, counts, remap = _merge_coincident(node_lons, node_lats, counts)
    if keep.size < len(nodes):
        node_lons, node_lats = node_lons[keep], node_lats[keep]
        assignment = remap[assignment]
    a, sigma = build_adjacency(node_lons, node_lats, params.k, params.sigma_m)
    a_norm = normalize_sym(a)
    graph = SpatialGraph(
        node_ids=list(range(node_lons.size)),
        lons=node_lons,
        lats=node_lats,
        member_counts=counts,
        adjacency=a,
        adjacency_norm=a_norm,
        params=GraphParams(params.cell_size_m, params.k, sigma),
    )
    return graph, assignment


def save_graph(
    graph: SpatialGraph, nodes_path: Path, edges_path: Path, config_hash: str = ""
) -> None:
    """Write nodes and edges CSVs; floats as shortest exact repr."""
    with open(nodes_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "lon", "lat", "member_count", "config_hash"])
        for i in graph.node_ids:
            writer.writerow(
                [
                    i,
                    repr(float(graph.lons[i])),
                    repr(float(graph.lats[i])),
                    int(graph.member_counts[i]),
                    config_hash,
                ]
            )
    coo = graph.adjacency.tocoo()
    norm = graph.adjacency_norm.tocsr()
    with open(edges_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "weight", "normalized_weight", "config_hash"])
        order = np.lexsort((coo.col, coo.row))
        for idx in order:
            i, j = int(coo.row[idx]), int(coo.col[idx])
            writer.writerow(
                [i, j, repr(float(coo.data[idx])), repr(float(norm[i, j])), config_hash]
            )


def load_graph(nodes_path: Path, edges_path: Path, params: GraphParams | None = None) -> SpatialGraph:
    ids, lons, lats, counts = [], [], [], []
    with open(nodes_path, newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(int(row["node_id"]))
            lons.append(float(row["lon"]))
            lats.append(float(row["lat"]))
            counts.append(int(row["member_count"]))
    n = len(ids)
    rows, cols, w, wn = [], [], [], []
    with open(edges_path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(int(row["i"]))
            cols.append(int(row["j"]))
            w.append(float(row["weight"]))
            wn.append(float(row["normalized_weight"]))
    a = sparse.coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    a_norm = sparse.coo_matrix((wn, (rows, cols)), shape=(n, n)).tocsr()
    return SpatialGraph(
        node_ids=ids,
        lons=np.array(lons),
        lats=np.array(lats),
        member_counts=np.array(counts),
        adjacency=a,
        adjacency_norm=a_norm,
        params=params or GraphParams(),
    )
