"""Vietoris-Rips persistence in dimensions 0 and 1 for small planar point clouds."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist, squareform

from palace.diagram import PersistenceDiagram

DEFAULT_MAX_POINTS = 128


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    label: int | None = None

    def __post_init__(self):
        arr = np.asarray(self.points, dtype=float)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] != 2:
            raise ValueError(f"point cloud must be a non-empty (n, 2) array, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("point cloud has non-finite coordinates")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    def __len__(self) -> int:
        return self.points.shape[0]


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if ra < rb:
            ra, rb = rb, ra
        self.parent[ra] = rb
        return True


def rips_persistence(
    cloud: PointCloud,
    max_radius: float = np.inf,
    max_points: int = DEFAULT_MAX_POINTS,
    tag: str = "rips",
) -> tuple[PersistenceDiagram, PersistenceDiagram]:
    """H0 and H1 diagrams of the Rips filtration, simplex value = diameter.

    Simplices above ``max_radius`` are left out; classes still alive there are
    essential and dropped, as are zero-persistence bars and the one infinite
    H0 class. Simplices are ordered by (value, dimension, vertex tuple).

    H1 is computed by reducing edge coboundaries in reverse filtration order
    (the cohomology formulation, which yields the same pairs as the homology
    reduction); edges that already killed an H0 class are cleared up front.
    """
    if not max_radius > 0:
        raise ValueError("max_radius must be positive")
    n = len(cloud)
    if n > max_points:
        raise ValueError(f"point cloud has {n} points; the cap is {max_points}")
    label = cloud.label
    empty = np.zeros((0, 2))
    if n < 2:
        return (
            PersistenceDiagram(empty, label=label, tag=f"{tag}:H0"),
            PersistenceDiagram(empty, label=label, tag=f"{tag}:H1"),
        )

    dist = squareform(pdist(cloud.points))
    iu, ju = np.triu_indices(n, k=1)
    evals = dist[iu, ju]
    keep = evals <= max_radius
    iu, ju, evals = iu[keep], ju[keep], evals[keep]
    eorder = np.lexsort((ju, iu, evals))
    iu, ju, evals = iu[eorder], ju[eorder], evals[eorder]
    n_edges = len(evals)

    h0 = []
    uf = _UnionFind(n)
    negative = np.zeros(n_edges, dtype=bool)
    for e in range(n_edges):
        if uf.union(int(iu[e]), int(ju[e])):
            negative[e] = True
            if evals[e] > 0:
                h0.append((0.0, float(evals[e])))

    h1 = []
    if n >= 3 and n_edges:
        edge_id = np.full((n, n), -1, dtype=np.int64)
        edge_id[iu, ju] = np.arange(n_edges)
        edge_id[ju, iu] = np.arange(n_edges)

        ti, tj, tk = (a.ravel() for a in np.meshgrid(*(np.arange(n),) * 3, indexing="ij"))
        sel = (ti < tj) & (tj < tk)
        ti, tj, tk = ti[sel], tj[sel], tk[sel]
        tvals = np.maximum(np.maximum(dist[ti, tj], dist[ti, tk]), dist[tj, tk])
        tkeep = tvals <= max_radius
        ti, tj, tk, tvals = ti[tkeep], tj[tkeep], tk[tkeep], tvals[tkeep]
        torder = np.lexsort((tk, tj, ti, tvals))
        ti, tj, tk, tvals = ti[torder], tj[torder], tk[torder], tvals[torder]

        # coboundary of each edge as a bitmask over triangle positions
        cob = [0] * n_edges
        for t, (a, b, c) in enumerate(zip(ti.tolist(), tj.tolist(), tk.tolist())):
            bit = 1 << t
            cob[edge_id[a, b]] |= bit
            cob[edge_id[a, c]] |= bit
            cob[edge_id[b, c]] |= bit

        pivots: dict[int, int] = {}
        for e in range(n_edges - 1, -1, -1):
            if negative[e]:
                continue
            col = cob[e]
            while col:
                low = (col & -col).bit_length() - 1
                other = pivots.get(low)
                if other is None:
                    pivots[low] = col
                    birth, death = float(evals[e]), float(tvals[low])
                    if death > birth:
                        h1.append((birth, death))
                    break
                col ^= other

    return (
        PersistenceDiagram(np.array(h0).reshape(-1, 2), label=label, tag=f"{tag}:H0"),
        PersistenceDiagram(np.array(h1).reshape(-1, 2), label=label, tag=f"{tag}:H1"),
    )


def read_clouds(path) -> list[PointCloud]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                label = obj.get("label")
                out.append(PointCloud(obj["points"], label=None if label is None else int(label)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed point-cloud record: {exc}") from exc
    return out


def write_clouds(clouds, path) -> None:
    with open(path, "w") as fh:
        for cloud in clouds:
            fh.write(json.dumps({"points": cloud.points.tolist(), "label": cloud.label}) + "\n")
