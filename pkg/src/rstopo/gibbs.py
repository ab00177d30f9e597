"""Cluster-expansion Hamiltonian on projected diagrams.

A configuration is an ``(N, 2)`` array of projected points.  The order-k
neighbourhood of a point is its k nearest other configuration points,
provided all of them lie within ``delta``; otherwise it is empty.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diagram import ModelConfig, ProjectedDiagram


@dataclass(frozen=True)
class Theta:
    """Interaction parameters (theta_H, theta_V, theta_1..theta_K)."""

    theta_H: float
    theta_V: float
    theta_k: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "theta_k", tuple(float(t) for t in self.theta_k))

    @property
    def K(self) -> int:
        return len(self.theta_k)

    def as_array(self) -> np.ndarray:
        return np.array([self.theta_H, self.theta_V, *self.theta_k], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "Theta":
        arr = np.asarray(arr, dtype=float)
        return cls(float(arr[0]), float(arr[1]), tuple(arr[2:].tolist()))

    def names(self) -> list[str]:
        return ["theta_H", "theta_V"] + [f"theta_{k}" for k in range(1, self.K + 1)]

    def to_dict(self) -> dict:
        return dict(zip(self.names(), self.as_array().tolist()))

    @classmethod
    def from_dict(cls, d: dict) -> "Theta":
        K = len(d) - 2
        return cls(d["theta_H"], d["theta_V"], tuple(d[f"theta_{k}"] for k in range(1, K + 1)))

    def require_normalizable(self):
        if not (self.theta_H > 0 and self.theta_V > 0):
            raise ValueError("theta_H and theta_V must be positive for a normalizable density")


@dataclass(frozen=True, eq=False)
class Neighborhood:
    center: np.ndarray
    members: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    distances: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def empty(self) -> bool:
        return self.indices.size == 0

    def __len__(self) -> int:
        return self.indices.size


def _points(ppd) -> np.ndarray:
    if isinstance(ppd, ProjectedDiagram):
        return ppd.points
    return np.asarray(ppd, dtype=float).reshape(-1, 2)


def neighborhood(x, k: int, ppd, delta: float, exclude: int | None = None) -> Neighborhood:
    """The k nearest configuration points to ``x``, or empty if any lies beyond delta.

    ``exclude`` is the index of ``x`` in the configuration when ``x`` is a
    member of it.  Distance ties go to the smaller index.
    """
    if k < 1:
        raise ValueError("neighbourhood order k must be >= 1")
    pts = _points(ppd)
    x = np.asarray(x, dtype=float)
    idx = np.arange(pts.shape[0])
    if exclude is not None:
        idx = idx[idx != exclude]
    dist = np.hypot(pts[idx, 0] - x[0], pts[idx, 1] - x[1])
    order = np.argsort(dist, kind="stable")
    if order.size < k or dist[order[k - 1]] > delta:
        return Neighborhood(center=x)
    sel = order[:k]
    return Neighborhood(center=x, members=pts[idx[sel]], indices=idx[sel], distances=dist[sel])


def cluster_length(x, k: int, ppd, delta: float, exclude: int | None = None) -> float:
    return float(neighborhood(x, k, ppd, delta, exclude).distances.sum())


def sorted_neighbor_distances(pts: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    """Per point, the K smallest distances to other points and their indices.

    Rows are padded with ``inf`` / ``-1`` when N - 1 < K.
    """
    n = pts.shape[0]
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    np.fill_diagonal(dist, np.inf)
    dist = np.hstack([dist, np.full((n, K), np.inf)])
    order = np.argsort(dist, axis=1, kind="stable")[:, :K]
    d = np.take_along_axis(dist, order, axis=1)
    order[~np.isfinite(d)] = -1
    return d, order


def cluster_lengths(ppd, K: int, delta: float) -> np.ndarray:
    """``(N, K)`` matrix of cluster lengths L_k(x) for every configuration point."""
    pts = _points(ppd)
    if pts.shape[0] == 0:
        return np.zeros((0, K))
    d, _ = sorted_neighbor_distances(pts, K)
    active = d <= delta
    csum = np.cumsum(np.where(np.isfinite(d), d, 0.0), axis=1)
    return np.where(active, csum, 0.0)


def total_cluster_length(k: int, ppd, delta: float) -> float:
    return float(cluster_lengths(ppd, k, delta)[:, k - 1].sum())


def spread_terms(ppd) -> tuple[float, float, float]:
    """(sigma_H^2, sigma_V^2, mean x1): centred and uncentred sums of squares."""
    pts = _points(ppd)
    if pts.shape[0] == 0:
        raise ValueError("spread terms need at least one point")
    xbar = float(pts[:, 0].mean())
    return float(((pts[:, 0] - xbar) ** 2).sum()), float((pts[:, 1] ** 2).sum()), xbar


def hamiltonian(ppd, theta: Theta, config: ModelConfig) -> float:
    if theta.K != config.K:
        raise ValueError(f"theta has {theta.K} cluster terms, config expects K={config.K}")
    s_h, s_v, _ = spread_terms(ppd)
    L = cluster_lengths(ppd, config.K, config.delta).sum(axis=0)
    return float(theta.theta_H * s_h + theta.theta_V * s_v + np.dot(theta.theta_k, L))


def neighborhood_sets(x, ppd, config: ModelConfig, exclude: int | None = None) -> list[Neighborhood]:
    """Order-1..K neighbourhoods of ``x``."""
    return [neighborhood(x, k, ppd, config.delta, exclude) for k in range(1, config.K + 1)]


def conditional_energy(z, nbhd_sets: Sequence[Neighborhood], xbar1: float, theta: Theta,
                       config: ModelConfig) -> float:
    """Single-point energy of ``z`` against neighbourhoods held fixed.

    A cluster term contributes only if every fixed member is within delta
    of ``z``.
    """
    z = np.asarray(z, dtype=float)
    e = theta.theta_H * (z[0] - xbar1) ** 2 + theta.theta_V * z[1] ** 2
    for t, nb in zip(theta.theta_k, nbhd_sets):
        if nb.empty:
            continue
        dist = np.hypot(nb.members[:, 0] - z[0], nb.members[:, 1] - z[1])
        if np.all(dist <= config.delta):
            e += t * dist.sum()
    return float(e)
