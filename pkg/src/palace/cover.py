"""Landmark placement, cover geometry and the structural audits.

Positions are diagram points, distances are one-point bottleneck distances
(:func:`palace.diagram.point_distances`). The data support is always a finite
array of training diagram points.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from palace.diagram import DiagramPoint, PersistenceDiagram, bottleneck_distance, point_distances

logger = logging.getLogger(__name__)

WEIGHT_TOL = 1e-9


class Landmark(NamedTuple):
    position: DiagramPoint
    radius: float
    weight: float


@dataclass(frozen=True, eq=False)
class LandmarkConfiguration:
    """K landmarks stored column-wise, plus the separation scale ``tau``."""

    positions: np.ndarray
    radii: np.ndarray
    weights: np.ndarray
    tau: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2).copy()
        radii = np.asarray(self.radii, dtype=float).ravel().copy()
        weights = np.asarray(self.weights, dtype=float).ravel().copy()
        k = len(pos)
        if k < 1:
            raise ValueError("a configuration needs at least one landmark")
        if radii.shape != (k,) or weights.shape != (k,):
            raise ValueError("positions, radii and weights must have matching lengths")
        if (radii <= 0).any():
            raise ValueError("landmark radii must be positive")
        if (weights <= 0).any():
            raise ValueError("landmark weights must be positive")
        if abs(float(weights @ weights) - 1.0) > WEIGHT_TOL:
            raise ValueError(f"sum of squared weights is {float(weights @ weights)!r}, expected 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        for arr in (pos, radii, weights):
            arr.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "tau", float(self.tau))

    @classmethod
    def equal_weights(cls, positions, radii, tau) -> "LandmarkConfiguration":
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        k = len(positions)
        radii = np.broadcast_to(np.asarray(radii, dtype=float), (k,))
        return cls(positions, radii, np.full(k, 1.0 / math.sqrt(k)), tau)

    @property
    def K(self) -> int:
        return len(self.radii)

    @property
    def landmarks(self) -> list[Landmark]:
        return [
            Landmark(DiagramPoint(float(b), float(d)), float(r), float(w))
            for (b, d), r, w in zip(self.positions, self.radii, self.weights)
        ]

    def to_json(self) -> str:
        return json.dumps(
            {
                "tau": self.tau,
                "landmarks": [
                    {"p": [float(b), float(d)], "r": float(r), "w": float(w)}
                    for (b, d), r, w in zip(self.positions, self.radii, self.weights)
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "LandmarkConfiguration":
        obj = json.loads(text)
        lms = obj["landmarks"]
        return cls(
            [lm["p"] for lm in lms], [lm["r"] for lm in lms], [lm["w"] for lm in lms], obj["tau"]
        )


class AdmissibilityReport(NamedTuple):
    lebesgue: float
    cond_shrink: bool
    cond_radius: bool
    admissible: bool


def _support_array(support) -> np.ndarray:
    if isinstance(support, PersistenceDiagram):
        return support.points
    if isinstance(support, (list, tuple)) and support and isinstance(support[0], PersistenceDiagram):
        return pool_points(support)
    arr = np.asarray(support, dtype=float).reshape(-1, 2)
    if len(arr) == 0:
        raise ValueError("support must be non-empty")
    return arr


def pool_points(diagrams: Sequence[PersistenceDiagram]) -> np.ndarray:
    """All points of a list of diagrams stacked in order."""
    if not diagrams:
        return np.zeros((0, 2))
    return np.concatenate([d.points for d in diagrams], axis=0)


# -- placement ---------------------------------------------------------------


def fps_indices(points, K: int, seed_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Farthest-point sampling; returns chosen indices and insertion distances.

    The insertion distance of the seed is ``inf``; later entries are the
    distance from the chosen point to the landmarks already placed, which is
    non-increasing. Ties go to the lowest input index (``argmax`` semantics).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        raise ValueError("cannot place landmarks on an empty point set")
    if not 1 <= K <= n:
        raise ValueError(f"K={K} must lie in [1, {n}]")
    if not 0 <= seed_index < n:
        raise ValueError("seed_index out of range")
    chosen = np.empty(K, dtype=np.int64)
    insertion = np.empty(K)
    chosen[0], insertion[0] = seed_index, np.inf
    mind = point_distances(pts, pts[seed_index : seed_index + 1])[:, 0]
    for t in range(1, K):
        i = int(np.argmax(mind))
        chosen[t], insertion[t] = i, mind[i]
        mind = np.minimum(mind, point_distances(pts, pts[i : i + 1])[:, 0])
    return chosen, insertion


def fps_place(points, K: int, seed_index: int = 0) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    idx, insertion = fps_indices(pts, K, seed_index)
    return pts[idx], insertion


def fps_seed_sweep(points, K: int, seeds: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    """FPS re-run from each seed index, for placement-stability studies."""
    return [fps_place(points, K, s) for s in seeds]


def class_budgets(counts: Mapping[int, int], K: int) -> dict[int, int]:
    """Split K across classes: floor(K/k) each, remainder to the lowest class
    indices, then clamp to each class's point count and pass the surplus on to
    the classes that follow."""
    classes = sorted(c for c, n in counts.items() if n > 0)
    if not classes:
        raise ValueError("no class has any points")
    k = len(classes)
    if K < k:
        raise ValueError(f"K={K} is smaller than the number of non-empty classes ({k})")
    base, rem = divmod(K, k)
    budgets = {c: base + (1 if i < rem else 0) for i, c in enumerate(classes)}
    carry = 0
    for c in classes:
        want = budgets[c] + carry
        budgets[c] = min(want, counts[c])
        carry = want - budgets[c]
    return budgets


def class_aware_fps(points_by_class: Mapping[int, np.ndarray], K: int) -> tuple[np.ndarray, bool]:
    """Per-class FPS with the budgets of :func:`class_budgets`.

    Each class is seeded at its first point; results are concatenated in
    class order. The flag is True when fewer than K landmarks could be placed.
    """
    arrays = {c: np.asarray(p, dtype=float).reshape(-1, 2) for c, p in points_by_class.items()}
    budgets = class_budgets({c: len(a) for c, a in arrays.items()}, K)
    out = [fps_place(arrays[c], budgets[c], 0)[0] for c in sorted(budgets) if budgets[c] > 0]
    positions = np.concatenate(out, axis=0)
    short = len(positions) < K
    if short:
        logger.warning("class-aware FPS placed %d of %d requested landmarks", len(positions), K)
    return positions, short


def assign_radii(positions, alpha: float, tau: float) -> np.ndarray:
    """Scaled nearest-neighbour radii clipped to [tau/2, 4 tau].

    A lone landmark has no neighbour and gets tau/2.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    if alpha < 0 or not tau > 0:
        raise ValueError("alpha must be >= 0 and tau > 0")
    if len(pos) < 2:
        return np.full(len(pos), tau / 2.0)
    d = point_distances(pos, pos)
    np.fill_diagonal(d, np.inf)
    return np.clip(alpha * d.min(axis=1), tau / 2.0, 4.0 * tau)


def _lattice_values(L: float, R: float) -> np.ndarray:
    n = int(math.floor(L / R + 1e-9))
    return R * np.arange(n + 1)


def grid_counts(L: float, R: float) -> tuple[int, int]:
    """(points strictly above the diagonal, all lattice points in [0, L]^2)."""
    n = len(_lattice_values(L, R))
    return n * (n - 1) // 2, n * n


def uniform_grid(L: float, R: float, tau: float | None = None, radius: float | None = None):
    """Square lattice ``R Z^2 ∩ [0, L]^2`` restricted to death > birth.

    Balls default to radius 3R/2 and weights are equal. ``tau`` defaults to
    2R, the upper end of the admissible spacing window.
    """
    if not (L > 0 and R > 0):
        raise ValueError("L and R must be positive")
    vals = _lattice_values(L, R)
    bb, dd = np.meshgrid(vals, vals, indexing="ij")
    keep = dd > bb
    pos = np.column_stack([bb[keep], dd[keep]])
    if len(pos) == 0:
        raise ValueError(f"no lattice point lies above the diagonal for L={L}, R={R}")
    order = np.lexsort((pos[:, 0], pos[:, 1]))
    pos = pos[order]
    r = 1.5 * R if radius is None else radius
    return LandmarkConfiguration.equal_weights(pos, r, 2.0 * R if tau is None else tau)


def matched_uniform_grid(L: float, K: int, tau: float | None = None, radius: float | None = None):
    """Exactly K points of :func:`uniform_grid` over [0, L]^2.

    Counts above the diagonal are triangular (1, 3, 6, 10, 15, ...), so the
    spacing is R = L / (n - 1) with n the smallest axis length giving at
    least K points, and the surplus is dropped from the top of the
    (death, birth) order. Returns (config, R).
    """
    if K < 1:
        raise ValueError("K must be positive")
    n = 2
    while n * (n - 1) // 2 < K:
        n += 1
    R = L / (n - 1)
    full = uniform_grid(L, R, tau, radius)
    keep = full.positions[:K]
    r = full.radii[:K]
    return LandmarkConfiguration.equal_weights(keep, r, full.tau), R


# -- cover geometry ----------------------------------------------------------


def coverage_heights(config: LandmarkConfiguration, support) -> np.ndarray:
    """Tallest cap over each support point: max_k (r_k - d(p_k, x))^+."""
    pts = _support_array(support)
    d = point_distances(pts, config.positions)
    return np.maximum(config.radii[None, :] - d, 0.0).max(axis=1)


def lebesgue_number(config: LandmarkConfiguration, support) -> float:
    return float(coverage_heights(config, support).min())


def check_admissibility(config: LandmarkConfiguration, support) -> AdmissibilityReport:
    lam = lebesgue_number(config, support)
    tau = config.tau
    shrink = lam >= tau / 4.0
    radius = float(config.radii.max()) <= (tau + lam) / 2.0
    return AdmissibilityReport(lam, bool(shrink), bool(radius), bool(shrink and radius))


def rho_nu(config: LandmarkConfiguration) -> float:
    """(tau/4) times the smallest weight among landmarks with r_k >= tau/4.

    Returns 0 (and logs) when no landmark qualifies.
    """
    qualifying = config.radii >= config.tau / 4.0
    if not qualifying.any():
        logger.warning("degenerate configuration: every radius is below tau/4")
        return 0.0
    return config.tau / 4.0 * float(config.weights[qualifying].min())


def rho_nu_is_degenerate(config: LandmarkConfiguration) -> bool:
    return not (config.radii >= config.tau / 4.0).any()


def rho_eff(config: LandmarkConfiguration, support) -> float:
    qualifying = config.radii >= config.tau / 4.0
    if not qualifying.any():
        return 0.0
    return lebesgue_number(config, support) * float(config.weights[qualifying].min())


def covering_radius(positions, support) -> float:
    d = point_distances(_support_array(support), np.asarray(positions, dtype=float).reshape(-1, 2))
    return float(d.min(axis=1).max())


class BudgetBounds(NamedTuple):
    K_adapt_max: int
    K_unif_min: int
    ratio: float
    informative: bool


_BUDGET_CAP = 2**53


def budget_bounds(D: float, L: float, tau: float) -> BudgetBounds:
    if not (D >= 0 and L > 0 and tau > 0):
        raise ValueError("need D >= 0, L > 0, tau > 0")
    adapt = (4.0 * D / tau) ** 2
    unif = 4.0 * (L / tau) ** 2
    if not (math.isfinite(adapt) and math.isfinite(unif)) or max(adapt, unif) > _BUDGET_CAP:
        raise OverflowError(f"landmark budgets overflow at tau={tau}")
    ratio = 4.0 * D * D / (L * L)
    return BudgetBounds(math.ceil(adapt), math.ceil(unif), ratio, ratio < 1.0)


# -- separation scale --------------------------------------------------------


def tau_median_half_persistence(diagrams: Sequence[PersistenceDiagram]) -> float:
    pts = pool_points(diagrams)
    if len(pts) == 0:
        raise ValueError("no diagram points")
    return float(np.median((pts[:, 1] - pts[:, 0]) / 2.0))


def tau_strongest_feature(diagrams: Sequence[PersistenceDiagram]) -> float:
    """Mean over diagrams of the largest half-persistence (empty diagrams skipped)."""
    tops = [float(d.persistence.max()) / 2.0 for d in diagrams if len(d)]
    if not tops:
        raise ValueError("all diagrams are empty")
    return float(np.mean(tops))


def tau_pair_quantile(
    diagrams: Sequence[PersistenceDiagram], q: float = 0.25, max_pairs: int | None = 500, seed: int = 0
) -> float:
    """q-quantile of bottleneck distances over (a sample of) diagram pairs."""
    m = len(diagrams)
    ii, jj = np.triu_indices(m, k=1)
    if len(ii) == 0:
        raise ValueError("need at least two diagrams")
    if max_pairs is not None and len(ii) > max_pairs:
        pick = np.sort(np.random.default_rng(seed).choice(len(ii), size=max_pairs, replace=False))
        ii, jj = ii[pick], jj[pick]
    d = [bottleneck_distance(diagrams[i], diagrams[j])[0] for i, j in zip(ii, jj)]
    return float(np.quantile(d, q))


TAU_STRATEGIES = {
    "median-half-persistence": tau_median_half_persistence,
    "pair-quantile": tau_pair_quantile,
    "strongest-feature": tau_strongest_feature,
}


# -- audits ------------------------------------------------------------------


class NonInterferenceAudit(NamedTuple):
    d: float
    min_cross_ratio: float
    passes: bool
    within_scale_ok: bool
    auditable: bool


def audit_noninterference(A: PersistenceDiagram, B: PersistenceDiagram) -> NonInterferenceAudit:
    """Cross-index separation of the optimal matching, relative to d_B(A, B).

    A pair is auditable only when |A| = |B|, d_B > 0 and the witnessing
    matching sends no point to the diagonal.
    """
    d, matching = bottleneck_distance(A, B)
    n = len(A)
    total = len(B) == n and all(i is not None and j is not None for i, j in matching)
    if d == 0 or not total:
        return NonInterferenceAudit(d, math.nan, False, False, False)
    if n == 1:
        return NonInterferenceAudit(d, math.inf, True, True, True)
    sigma = np.empty(n, dtype=np.int64)
    for i, j in matching:
        sigma[i] = j
    cross = point_distances(A.points, B.points[sigma])
    np.fill_diagonal(cross, np.inf)
    ratio = float(cross.min()) / d
    within_a = point_distances(A.points, A.points)
    within_b = point_distances(B.points, B.points)
    np.fill_diagonal(within_a, np.inf)
    np.fill_diagonal(within_b, np.inf)
    within = float(within_a.min()) > 4 * d or float(within_b.min()) > 4 * d
    return NonInterferenceAudit(d, ratio, ratio > 3.0, within, True)


def audit_certificate(pairs, config: LandmarkConfiguration) -> dict:
    """Embedded distance over the certificate for every tau-separated pair."""
    from palace.embed import embed

    rho = rho_nu(config)
    ratios = []
    for A, B in pairs:
        d, _ = bottleneck_distance(A, B)
        if d < config.tau:
            continue
        gap = float(np.linalg.norm(embed(A, config) - embed(B, config)))
        ratios.append(gap / rho if rho > 0 else math.inf)
    r = np.asarray(ratios)
    summary = {"n_pairs": len(pairs), "n_tau": len(r), "rho_nu": rho}
    if len(r):
        p25, p50, p75 = np.percentile(r, [25, 50, 75])
        summary.update(
            bound_pct=100.0 * float((r >= 1.0).mean()),
            p25=float(p25),
            p50=float(p50),
            p75=float(p75),
            min=float(r.min()),
        )
    else:
        summary.update(bound_pct=math.nan, p25=math.nan, p50=math.nan, p75=math.nan, min=math.nan)
    return summary
