"""Spatial relationship graphs and their normalized propagation matrices.

Two graph kinds: distance (nodes linked when closer than a threshold in
meters) and correlation (nodes linked when their train-split flow series
correlate above a threshold). Propagation uses the first-order renormalized
form A_hat = D^-1/2 (A + I) D^-1/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_M = 6_371_000.0

# Published per-scenario defaults: (distance meters, correlation threshold).
THRESHOLD_PRESETS = {
    "bike": (1000.0, 0.0),
    "metro": (5000.0, 0.35),
    "ev": (1000.0, 0.1),
}


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class SpatialGraph:
    kind: str
    adjacency: np.ndarray  # (N, N) symmetric, zero diagonal
    threshold: float
    propagation: np.ndarray  # (N, N) renormalized

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters between two lat/lon points in degrees."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(lon2 - lon1)
    a = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2) ** 2
    return float(2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(a)))


def pairwise_distances_m(coords: np.ndarray, metric: str = "haversine") -> np.ndarray:
    """All-pairs distances in meters; ``metric`` is haversine or planar.

    Planar treats coordinates as already-projected meters, for callers with
    non-geographic inputs.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if metric == "planar":
        diff = coords[:, None, :] - coords[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=-1))
    if metric != "haversine":
        raise GraphError(f"unknown distance metric {metric!r}")
    lat = np.radians(coords[:, 0])
    lon = np.radians(coords[:, 1])
    dphi = lat[:, None] - lat[None, :]
    dlam = lon[:, None] - lon[None, :]
    a = np.sin(dphi / 2) ** 2 + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.sin(dlam / 2) ** 2
    a = np.clip(a, 0.0, 1.0)
    out = 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(a))
    np.fill_diagonal(out, 0.0)
    return out


def pearson(x, y) -> float:
    """Sample Pearson correlation; constant inputs are defined as 0."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise GraphError(f"pearson needs equal lengths, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise GraphError("pearson needs at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0.0:
        return 0.0
    return float((dx * dy).sum() / denom)


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """First-order propagation matrix D^-1/2 (A + I) D^-1/2.

    D is the degree of A + I, so isolated nodes self-normalize to identity
    rows and all eigenvalues stay within [-1, 1].
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphError(f"adjacency must be square, got shape {a.shape}")
    if not np.allclose(a, a.T):
        raise GraphError("adjacency must be symmetric")
    if np.any(a < 0):
        raise GraphError("adjacency must be non-negative")
    with_loops = a + np.eye(a.shape[0])
    inv_sqrt = 1.0 / np.sqrt(with_loops.sum(axis=1))
    return with_loops * inv_sqrt[:, None] * inv_sqrt[None, :]


def build_distance_graph(locations, threshold_m: float, metric: str = "haversine") -> SpatialGraph:
    """Link node pairs strictly closer than ``threshold_m`` meters."""
    if threshold_m <= 0:
        raise GraphError(f"distance threshold must be positive, got {threshold_m}")
    if len(locations) < 2:
        raise GraphError("distance graph needs at least 2 locations")
    dist = pairwise_distances_m(locations.coords, metric)
    adjacency = (dist < threshold_m).astype(np.float64)
    np.fill_diagonal(adjacency, 0.0)
    return SpatialGraph("distance", adjacency, float(threshold_m), normalize_adjacency(adjacency))


def build_correlation_graph(train_flow: np.ndarray, threshold: float) -> SpatialGraph:
    """Link node pairs whose train-split series correlate strictly above ``threshold``."""
    flow = np.asarray(train_flow, dtype=np.float64)
    if flow.ndim != 2 or flow.shape[0] < 2:
        raise GraphError(f"train flow must be (T>=2, N), got shape {flow.shape}")
    centered = flow - flow.mean(axis=0)
    norms = np.sqrt((centered ** 2).sum(axis=0))
    safe = np.where(norms > 0, norms, 1.0)
    corr = (centered / safe).T @ (centered / safe)
    constant = norms == 0
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    adjacency = (corr > threshold).astype(np.float64)
    np.fill_diagonal(adjacency, 0.0)
    return SpatialGraph("correlation", adjacency, float(threshold), normalize_adjacency(adjacency))


def build_graphs(kinds, locations, train_flow: np.ndarray, distance_threshold_m: float,
                 correlation_threshold: float, metric: str = "haversine") -> list[SpatialGraph]:
    graphs = []
    for kind in kinds:
        if kind == "distance":
            graphs.append(build_distance_graph(locations, distance_threshold_m, metric))
        elif kind == "correlation":
            graphs.append(build_correlation_graph(train_flow, correlation_threshold))
        else:
            raise GraphError(f"unknown graph kind {kind!r}; expected distance or correlation")
    if not graphs:
        raise GraphError("at least one graph kind is required")
    return graphs
