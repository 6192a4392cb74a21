"""End-to-end runs: placement, fold-local CV, selector sweeps and audits."""

from __future__ import annotations

import csv
import logging
import math
from typing import Sequence

import numpy as np

from palace.cover import (
    TAU_STRATEGIES,
    LandmarkConfiguration,
    assign_radii,
    audit_certificate,
    audit_noninterference,
    class_aware_fps,
    fps_place,
    pool_points,
)
from palace.diagram import PersistenceDiagram
from palace.embed import embed_batch
from palace.kernel import bandwidth_quantile, gram
from palace.select import (
    fisher_ker,
    kernel_margin_hat,
    mahalanobis_margin,
    rho_nu_hat,
    score,
    spearman,
    tau_hat,
)
from palace.svm import DEFAULT_C_GRID, CVResult, cross_validate

logger = logging.getLogger(__name__)


def stratified_holdout(labels, test_frac: float, seed: int) -> np.ndarray:
    """Boolean test mask holding out round(test_frac * n_c) (at least 1) items per class."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    test = np.zeros(len(labels), dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        test[rng.choice(idx, size=max(1, int(round(test_frac * len(idx)))), replace=False)] = True
    return test


def resolve_tau(diagrams, strategy: str) -> float:
    try:
        rule = TAU_STRATEGIES[strategy]
    except KeyError:
        raise ValueError(f"unknown tau strategy {strategy!r}; choose from {sorted(TAU_STRATEGIES)}") from None
    return rule(diagrams)


def place_landmarks(
    diagrams: Sequence[PersistenceDiagram],
    labels,
    K: int,
    alpha: float = 1.0,
    tau_strategy: str = "median-half-persistence",
    placement: str = "class-aware",
    tau: float | None = None,
) -> LandmarkConfiguration:
    """FPS landmarks (class-aware or pooled) with clipped nearest-neighbour radii and equal weights."""
    if tau is None:
        tau = resolve_tau(diagrams, tau_strategy)
    if placement == "class-aware":
        by_class: dict[int, list] = {}
        for d, y in zip(diagrams, labels):
            by_class.setdefault(int(y), []).append(d)
        positions, short = class_aware_fps({c: pool_points(ds) for c, ds in sorted(by_class.items())}, K)
        if short:
            logger.warning("class-aware FPS placed %d of %d landmarks", len(positions), K)
    elif placement == "fps":
        positions, _ = fps_place(pool_points(diagrams), K, 0)
    else:
        raise ValueError(f"unknown placement {placement!r}")
    return LandmarkConfiguration.equal_weights(positions, assign_radii(positions, alpha, tau), tau)


class PlacementFeaturizer:
    """Fold-local featurizer for :func:`cross_validate`: landmarks see training diagrams only."""

    def __init__(self, K, alpha=1.0, tau_strategy="median-half-persistence", placement="class-aware"):
        self.K, self.alpha, self.tau_strategy, self.placement = K, alpha, tau_strategy, placement
        self.configs: list[LandmarkConfiguration] = []

    def __call__(self, train_diagrams, train_labels):
        config = place_landmarks(
            train_diagrams, train_labels, self.K, self.alpha, self.tau_strategy, self.placement
        )
        self.configs.append(config)
        return lambda ds: embed_batch(list(ds), config)


def run_cv(
    diagrams,
    labels,
    K: int,
    alpha: float = 1.0,
    tau_strategy: str = "median-half-persistence",
    placement: str = "class-aware",
    q_grid: Sequence[float] | None = (0.25,),
    sigma_grid: Sequence[float] | None = None,
    C_grid: Sequence[float] = DEFAULT_C_GRID,
    outer_folds: int = 10,
    seeds: Sequence[int] = (42,),
    inner_folds: int = 3,
) -> CVResult:
    if sigma_grid is not None:
        q_grid = None
    return cross_validate(
        list(diagrams),
        labels,
        featurize=PlacementFeaturizer(K, alpha, tau_strategy, placement),
        outer_folds=outer_folds,
        seeds=seeds,
        sigma_grid=sigma_grid,
        q_grid=q_grid,
        C_grid=C_grid,
        inner_folds=inner_folds,
    )


SWEEP_COLUMNS = [
    "K", "alpha", "sigma", "gamma_hat", "score", "fisher_ker", "rho_mah", "tau_hat", "rho_nu_hat", "cv_acc"
]


def run_selector_sweep(
    diagrams,
    labels,
    K_grid: Sequence[int],
    alpha_grid: Sequence[float] = (1.0,),
    q: float = 0.25,
    tau_strategy: str = "median-half-persistence",
    placement: str = "class-aware",
    with_cv: bool = True,
    cv_kwargs: dict | None = None,
    tau_kwargs: dict | None = None,
) -> tuple[list[dict], dict]:
    """Selectors for every (K, alpha) cell, optionally next to CV accuracy.

    Selectors use a gram built on the whole labelled set (they are meant to
    rank candidates before any training); CV accuracy uses fold-local
    placement. Returns the rows and the Spearman correlation of each
    selector with accuracy (empty without CV or with fewer than two cells).
    """
    labels = np.asarray(labels)
    t_hat = tau_hat(diagrams, labels, **(tau_kwargs or {}))
    rows = []
    for K in K_grid:
        for alpha in alpha_grid:
            config = place_landmarks(diagrams, labels, K, alpha, tau_strategy, placement)
            X = embed_batch(list(diagrams), config)
            sigma = bandwidth_quantile(X, q)
            G = gram(X, sigma).entries
            g = kernel_margin_hat(G, labels)
            try:
                rho_mah = mahalanobis_margin(G, labels)
            except ValueError as exc:
                logger.warning("K=%d alpha=%g: %s", K, alpha, exc)
                rho_mah = math.nan
            row = {
                "K": K,
                "alpha": alpha,
                "sigma": sigma,
                "gamma_hat": g,
                "score": score(g, K),
                "fisher_ker": fisher_ker(G, labels),
                "rho_mah": rho_mah,
                "tau_hat": t_hat,
                "rho_nu_hat": rho_nu_hat(t_hat, K),
                "cv_acc": math.nan,
            }
            if with_cv:
                res = run_cv(diagrams, labels, K, alpha, tau_strategy, placement, q_grid=(q,), **(cv_kwargs or {}))
                row["cv_acc"] = res.mean
            rows.append(row)
    rank = {}
    if with_cv and len(rows) >= 2:
        acc = [r["cv_acc"] for r in rows]
        for key in ("gamma_hat", "score", "fisher_ker", "rho_mah"):
            vals = [r[key] for r in rows]
            rank[key] = spearman(vals, acc) if all(v == v for v in vals) else math.nan
    return rows, rank


NI_COLUMNS = ["i", "j", "d_B", "min_cross_ratio", "passes", "within_scale_ok", "auditable"]
BOUND_COLUMNS = ["n_pairs", "n_tau", "rho_nu", "bound_pct", "p25", "p50", "p75", "min"]


def sample_pairs(m: int, n_pairs: int, seed: int) -> list[tuple[int, int]]:
    """Distinct unordered index pairs, uniformly without replacement."""
    ii, jj = np.triu_indices(m, k=1)
    pick = np.random.default_rng(seed).choice(len(ii), size=min(n_pairs, len(ii)), replace=False)
    return [(int(ii[t]), int(jj[t])) for t in np.sort(pick)]


def run_audits(diagrams, config: LandmarkConfiguration | None = None, n_pairs: int = 200, seed: int = 0):
    """Non-interference rows for sampled pairs, plus the certificate-bound summary when a config is given."""
    pairs = sample_pairs(len(diagrams), n_pairs, seed)
    ni = []
    for i, j in pairs:
        a = audit_noninterference(diagrams[i], diagrams[j])
        ni.append({"i": i, "j": j, "d_B": a.d, "min_cross_ratio": a.min_cross_ratio, "passes": a.passes,
                   "within_scale_ok": a.within_scale_ok, "auditable": a.auditable})
    bound = None
    if config is not None:
        bound = audit_certificate([(diagrams[i], diagrams[j]) for i, j in pairs], config)
    return ni, bound


def write_rows(rows, columns, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
