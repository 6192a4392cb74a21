"""Cap coordinates and the summation landmark embedding."""

from __future__ import annotations

import csv
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from palace.cover import LandmarkConfiguration
from palace.diagram import PersistenceDiagram, point_bottleneck, point_distances

SPARSE_MIN_K = 1000


def coordinate(p, r: float, x) -> float:
    """Height of the cap of radius r centred at p, evaluated at x."""
    return max(r - point_bottleneck(p, x), 0.0)


def embed(A: PersistenceDiagram, config: LandmarkConfiguration) -> np.ndarray:
    """Phi_k(A) = w_k * sum over a in A of the cap (p_k, r_k) at a."""
    pts = A.points if isinstance(A, PersistenceDiagram) else np.asarray(A, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros(config.K)
    caps = np.maximum(config.radii[None, :] - point_distances(pts, config.positions), 0.0)
    return config.weights * caps.sum(axis=0)


def _embed_dense(points, owner, m, config, chunk=4096):
    out = np.zeros((m, config.K))
    for start in range(0, len(points), chunk):
        sl = slice(start, start + chunk)
        caps = np.maximum(config.radii[None, :] - point_distances(points[sl], config.positions), 0.0)
        np.add.at(out, owner[sl], caps)
    return out * config.weights


def _embed_sparse(points, owner, m, config):
    """Accumulate only over landmarks whose ball can contain each point.

    A point x is inside ball k iff ||x - p_k||_inf < r_k or
    max(pers(x), pers(p_k))/2 < r_k, so the candidates are an l-infinity
    range query plus, for low-persistence x, the low-persistence landmarks.
    """
    out = np.zeros((m, config.K))
    if len(points) == 0:
        return out
    r_max = float(config.radii.max())
    tree = cKDTree(config.positions)
    half_p = (config.positions[:, 1] - config.positions[:, 0]) / 2.0
    diag_cands = np.flatnonzero(half_p < r_max)
    half_x = (points[:, 1] - points[:, 0]) / 2.0
    near = tree.query_ball_point(points, r_max, p=np.inf)
    for i, cands in enumerate(near):
        if half_x[i] < r_max:
            cands = np.union1d(cands, diag_cands)
        cands = np.asarray(cands, dtype=np.int64)
        if len(cands) == 0:
            continue
        d = point_distances(points[i : i + 1], config.positions[cands])[0]
        caps = np.maximum(config.radii[cands] - d, 0.0)
        out[owner[i], cands] += caps
    return out * config.weights


def embed_batch(
    diagrams: Sequence[PersistenceDiagram], config: LandmarkConfiguration, sparse: bool | None = None
) -> np.ndarray:
    """Row i is ``embed(diagrams[i], config)``.

    The sparse accumulation path is used automatically once K reaches
    ``SPARSE_MIN_K``.
    """
    m = len(diagrams)
    sizes = [len(d) for d in diagrams]
    points = np.concatenate([d.points for d in diagrams]) if m else np.zeros((0, 2))
    owner = np.repeat(np.arange(m), sizes)
    if sparse is None:
        sparse = config.K >= SPARSE_MIN_K
    if sparse:
        return _embed_sparse(points, owner, m, config)
    return _embed_dense(points, owner, m, config)


def active_count(A: PersistenceDiagram, config: LandmarkConfiguration) -> int:
    """Number of (point, landmark) pairs with the point strictly inside the ball."""
    if len(A) == 0:
        return 0
    return int((point_distances(A.points, config.positions) < config.radii[None, :]).sum())


def write_embedding_csv(matrix: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(range(matrix.shape[1]))
        for row in matrix:
            w.writerow(repr(float(v)) for v in row)


def read_embedding_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row] for row in rows[1:]]).reshape(len(rows) - 1, -1)
