"""Persistence diagrams, the bottleneck metric and diagram file I/O."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

logger = logging.getLogger(__name__)


class DiagramPoint(NamedTuple):
    birth: float
    death: float

    @property
    def persistence(self) -> float:
        return self.death - self.birth


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 2))
    if arr.ndim == 1 and arr.shape[0] == 2:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (n, 2) birth/death array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    """A finite multiset of (birth, death) points.

    ``points`` is stored as a read-only ``(n, 2)`` float array. Points with an
    infinite death are dropped on construction with a warning; a point with
    ``death < birth`` is rejected.
    """

    points: np.ndarray
    label: int | None = None
    tag: str = ""

    def __post_init__(self):
        arr = _as_points(self.points).copy()
        if np.isnan(arr).any():
            raise ValueError("diagram contains NaN coordinates")
        if np.isinf(arr[:, 0]).any():
            raise ValueError("diagram contains a point with infinite birth")
        essential = np.isinf(arr[:, 1])
        if essential.any():
            logger.warning("dropping %d essential (infinite-death) point(s)", int(essential.sum()))
            arr = arr[~essential]
        bad = arr[:, 1] < arr[:, 0]
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"point {i} has death < birth: {tuple(arr[i])}")
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __iter__(self):
        return (DiagramPoint(float(b), float(d)) for b, d in self.points)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PersistenceDiagram):
            return NotImplemented
        return (
            self.label == other.label
            and self.tag == other.tag
            and self.points.shape == other.points.shape
            and bool(np.array_equal(self.points, other.points))
        )

    __hash__ = None

    @property
    def persistence(self) -> np.ndarray:
        return self.points[:, 1] - self.points[:, 0]

    def with_points(self, points) -> "PersistenceDiagram":
        return PersistenceDiagram(points, label=self.label, tag=self.tag)


def point_bottleneck(x: Sequence[float], y: Sequence[float]) -> float:
    """Bottleneck distance between the one-point diagrams ``{x}`` and ``{y}``.

    Either the points are matched to each other (l-infinity cost) or both are
    sent to the diagonal (cost = the larger half-persistence).
    """
    linf = max(abs(x[0] - y[0]), abs(x[1] - y[1]))
    diag = max((x[1] - x[0]) / 2.0, (y[1] - y[0]) / 2.0)
    return min(linf, diag)


def point_distances(X, Y) -> np.ndarray:
    """Matrix of :func:`point_bottleneck` values between two point arrays."""
    X = _as_points(X)
    Y = _as_points(Y)
    linf = np.maximum(
        np.abs(X[:, None, 0] - Y[None, :, 0]),
        np.abs(X[:, None, 1] - Y[None, :, 1]),
    )
    hx = (X[:, 1] - X[:, 0]) / 2.0
    hy = (Y[:, 1] - Y[:, 0]) / 2.0
    return np.minimum(linf, np.maximum(hx[:, None], hy[None, :]))


def _linf_matrix(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.maximum(
        np.abs(X[:, None, 0] - Y[None, :, 0]),
        np.abs(X[:, None, 1] - Y[None, :, 1]),
    )


def _perfect_matching(linf, ha, hb, t, allow_diagonal=True):
    """Try to find a perfect matching of the diagonal-augmented graph at threshold t.

    Rows are the A points followed by one diagonal slot per B point; columns
    are the B points followed by one diagonal slot per A point. Returns the
    row->column assignment or None.
    """
    n, m = linf.shape
    if not allow_diagonal:
        if n != m:
            return None
        adj = csr_matrix((linf <= t).astype(np.int8))
        match = maximum_bipartite_matching(adj, perm_type="column")
        return match if (match >= 0).all() else None
    size = n + m
    block = np.zeros((size, size), dtype=np.int8)
    block[:n, :m] = linf <= t
    block[np.arange(n), m + np.arange(n)] = ha <= t
    block[n + np.arange(m), np.arange(m)] = hb <= t
    block[n:, m:] = 1
    match = maximum_bipartite_matching(csr_matrix(block), perm_type="column")
    return match if (match >= 0).all() else None


def bottleneck_distance(A, B) -> tuple[float, list[tuple[int | None, int | None]]]:
    """Exact bottleneck distance and a witnessing matching.

    The matching is a list of ``(i, j)`` pairs: ``i`` indexes A, ``j`` indexes
    B, and ``None`` on either side stands for the diagonal. When a total
    bijection A->B attains the optimum it is preferred over one that uses the
    diagonal.
    """
    P = A.points if isinstance(A, PersistenceDiagram) else _as_points(A)
    Q = B.points if isinstance(B, PersistenceDiagram) else _as_points(B)
    n, m = len(P), len(Q)
    if n == 0 and m == 0:
        return 0.0, []
    ha = (P[:, 1] - P[:, 0]) / 2.0
    hb = (Q[:, 1] - Q[:, 0]) / 2.0
    linf = _linf_matrix(P, Q)
    candidates = np.unique(np.concatenate([[0.0], linf.ravel(), ha, hb]))

    lo, hi = 0, len(candidates) - 1
    best = _perfect_matching(linf, ha, hb, candidates[hi])
    while lo < hi:
        mid = (lo + hi) // 2
        match = _perfect_matching(linf, ha, hb, candidates[mid])
        if match is None:
            lo = mid + 1
        else:
            hi, best = mid, match
    t = float(candidates[lo])

    total = _perfect_matching(linf, ha, hb, t, allow_diagonal=False) if n == m else None
    if total is not None:
        return t, [(i, int(total[i])) for i in range(n)]

    pairs: list[tuple[int | None, int | None]] = []
    for i in range(n):
        j = int(best[i])
        pairs.append((i, j) if j < m else (i, None))
    for j in range(m):
        if int(best[n + j]) == j:
            pairs.append((None, j))
    return t, pairs


def matching_cost(A, B, matching) -> float:
    """Largest displacement of a matching, diagonal assignments included."""
    P = A.points if isinstance(A, PersistenceDiagram) else _as_points(A)
    Q = B.points if isinstance(B, PersistenceDiagram) else _as_points(B)
    cost = 0.0
    for i, j in matching:
        if i is not None and j is not None:
            c = max(abs(P[i, 0] - Q[j, 0]), abs(P[i, 1] - Q[j, 1]))
        elif i is not None:
            c = (P[i, 1] - P[i, 0]) / 2.0
        else:
            c = (Q[j, 1] - Q[j, 0]) / 2.0
        cost = max(cost, float(c))
    return cost


def top_persistence_filter(A: PersistenceDiagram, n_max: int) -> PersistenceDiagram:
    """Keep the ``n_max`` most persistent points.

    Ties are broken by smaller birth, then smaller death, then input order.
    The result is ordered by that same ranking, so the filter is idempotent.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    pts = A.points
    idx = np.arange(len(pts))
    order = np.lexsort((idx, pts[:, 1], pts[:, 0], -(pts[:, 1] - pts[:, 0])))
    return A.with_points(pts[order[:n_max]])


def read_diagrams(path) -> list[PersistenceDiagram]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pts = [[float(b), math.inf if d is None else float(d)] for b, d in obj["points"]]
                label = obj.get("label")
                diagram = PersistenceDiagram(
                    pts, label=None if label is None else int(label), tag=str(obj.get("tag", ""))
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed diagram record: {exc}") from exc
            out.append(diagram)
    return out


def write_diagrams(diagrams: Iterable[PersistenceDiagram], path) -> None:
    with open(path, "w") as fh:
        for dgm in diagrams:
            rec = {"points": dgm.points.tolist(), "label": dgm.label, "tag": dgm.tag}
            fh.write(json.dumps(rec) + "\n")
