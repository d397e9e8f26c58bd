"""Per-window team graph: pairwise distances, row-softmax adjacency and the
symmetric normalized, self-connected propagation matrix used by the GCN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GraphDegeneracyError(ValueError):
    pass


def _check_positions(positions) -> np.ndarray:
    p = np.asarray(positions, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"positions must be an (N, 2) array, got shape {p.shape}")
    if p.shape[0] < 2:
        raise ValueError(f"need at least 2 nodes, got {p.shape[0]}")
    if not np.all(np.isfinite(p)):
        raise ValueError("positions must be finite")
    return p


def pairwise_distances(positions) -> np.ndarray:
    """Euclidean distance matrix, exactly symmetric with a zero diagonal."""
    p = _check_positions(positions)
    diff = p[:, None, :] - p[None, :, :]
    d = np.sqrt((diff**2).sum(axis=-1))
    # sqrt of identical sums is identical, but force exactness anyway
    d = np.triu(d, 1)
    return d + d.T


def adjacency(positions, distance_scale: float = 1.0) -> np.ndarray:
    """Row-softmax of negated distances, self term included.

    ``A[i, j] = exp(-s * d_ij) / sum_k exp(-s * d_ik)``; every row sums to 1.
    """
    d = pairwise_distances(positions) * distance_scale
    # row minimum is the diagonal 0, so exp(-d) never underflows for the self term
    e = np.exp(-d)
    return e / e.sum(axis=1, keepdims=True)


def normalized_laplacian(a, degree_from: str = "self_loops") -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2``.

    ``degree_from="self_loops"`` takes degrees from ``A + I``; ``"adjacency"``
    takes them from ``A`` alone.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    a_tilde = a + np.eye(a.shape[0])
    if degree_from == "self_loops":
        deg = a_tilde.sum(axis=1)
    elif degree_from == "adjacency":
        deg = a.sum(axis=1)
    else:
        raise ValueError(f"degree_from must be 'self_loops' or 'adjacency', got {degree_from!r}")
    if np.any(deg <= 0):
        raise GraphDegeneracyError(f"non-positive node degree {deg.min()!r}")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return inv_sqrt[:, None] * a_tilde * inv_sqrt[None, :]


@dataclass(frozen=True)
class GraphSnapshot:
    adjacency: np.ndarray
    laplacian: np.ndarray
    timestamp: float = 0.0


def build_snapshot(
    positions,
    t: float = 0.0,
    distance_scale: float = 1.0,
    degree_from: str = "self_loops",
) -> GraphSnapshot:
    a = adjacency(positions, distance_scale)
    return GraphSnapshot(a, normalized_laplacian(a, degree_from), float(t))
