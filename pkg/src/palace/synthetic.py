"""Synthetic annulus task and the domain-inflation benchmark.

Random streams: cloud ``i`` of a run seeded with ``seed`` draws from
``numpy.random.default_rng(SeedSequence(seed, spawn_key=(i,)))`` (PCG64), so
every cloud is reproducible on its own and independent of generation order.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from palace.cover import (
    LandmarkConfiguration,
    assign_radii,
    class_aware_fps,
    fps_place,
    matched_uniform_grid,
    pool_points,
    tau_strongest_feature,
)
from palace.certify import firing_report, fit_class_stats
from palace.diagram import PersistenceDiagram, top_persistence_filter
from palace.embed import embed_batch
from palace.rips import PointCloud, rips_persistence
from palace.svm import DEFAULT_C_GRID, cross_validate

logger = logging.getLogger(__name__)

INNER_RADII = (0.85, 0.70, 0.50, 0.00)
OUTER_RADIUS = 1.0
OUTLIER_LEVELS = (1.0, 2.0, 3.0, 4.0, 5.0, 8.0)


def cloud_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(index,))


def gen_annulus(class_index: int, n_points: int = 60, noise_sd: float = 0.08, seed=0) -> PointCloud:
    """Area-uniform sample of the annulus [r_in, 1] plus isotropic Gaussian noise."""
    r_in = INNER_RADII[class_index]
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=n_points)
    theta = rng.uniform(0.0, 2.0 * math.pi, size=n_points)
    r = np.sqrt(u * (OUTER_RADIUS**2 - r_in**2) + r_in**2)
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    if noise_sd > 0:
        pts = pts + rng.normal(0.0, noise_sd, size=pts.shape)
    return PointCloud(pts, label=class_index)


def gen_annulus_dataset(
    n_per_class: int = 100, n_points: int = 60, noise_sd: float = 0.08, seed: int = 42, n_classes: int = 4
) -> list[PointCloud]:
    """Class-major list of clouds; cloud c * n_per_class + j uses stream index of that position."""
    return [
        gen_annulus(c, n_points, noise_sd, cloud_seed(seed, c * n_per_class + j))
        for c in range(n_classes)
        for j in range(n_per_class)
    ]


def inflate_diagram(A: PersistenceDiagram, ell: float) -> PersistenceDiagram:
    """Append the point (0, ell); a zero-persistence point is not added."""
    if ell <= 0:
        return A
    return A.with_points(np.vstack([A.points, [[0.0, float(ell)]]]))


def h1_diagrams(clouds: Sequence[PointCloud], n_max: int = 30) -> list[PersistenceDiagram]:
    out = []
    for cloud in clouds:
        _, h1 = rips_persistence(cloud)
        out.append(top_persistence_filter(h1, n_max))
    return out


@dataclass
class InflationConfig:
    n_per_class: int = 100
    n_points: int = 60
    noise_sd: float = 0.08
    seed: int = 42
    n_max: int = 30
    K: int = 11
    alpha: float = 1.0
    levels: tuple = OUTLIER_LEVELS
    padding: float = 1.05
    outer_folds: int = 10
    inner_folds: int = 3
    q: float = 0.25
    C_grid: tuple = DEFAULT_C_GRID
    grid_radius: str = "grid"  # "grid": 3R/2 balls; "nn": the FPS arm's clipped rule
    placement: str = "fps"  # "fps" (pooled) or "class-aware"
    tol: float = 1e-4
    extra: dict = field(default_factory=dict)


class _Arm:
    """Fold-local featurizer: places landmarks from training indices only."""

    def __init__(self, kind, base, inflated, cfg: InflationConfig):
        self.kind, self.base, self.inflated, self.cfg = kind, base, inflated, cfg
        self.configs: list[LandmarkConfiguration] = []

    def __call__(self, train_idx, train_labels):
        cfg = self.cfg
        train_idx = list(train_idx)
        tau = tau_strongest_feature([self.base[i] for i in train_idx])
        train = [self.inflated[i] for i in train_idx]
        if self.kind == "uniform":
            L = cfg.padding * max(float(d.persistence.max()) for d in train if len(d))
            grid, _ = matched_uniform_grid(L, cfg.K, tau)
            positions = grid.positions
        elif cfg.placement == "class-aware":
            by_class = {}
            for d, y in zip(train, train_labels):
                by_class.setdefault(int(y), []).append(d)
            positions, _ = class_aware_fps({c: pool_points(ds) for c, ds in by_class.items()}, cfg.K)
        else:
            positions, _ = fps_place(pool_points(train), cfg.K, 0)
        if self.kind == "uniform" and cfg.grid_radius == "grid":
            config = grid
        else:
            config = LandmarkConfiguration.equal_weights(positions, assign_radii(positions, cfg.alpha, tau), tau)
        self.configs.append(config)
        inflated = self.inflated

        def transform(idx):
            return embed_batch([inflated[i] for i in idx], config)

        return transform


def run_domain_inflation(cfg: InflationConfig, diagrams=None, labels=None) -> list[dict]:
    """Uniform-grid vs FPS placement accuracy at every outlier level.

    Returns one row per level with the columns of the inflation table:
    ell, L, uniform mean/std, fps mean/std, and their difference (percent).
    """
    if diagrams is None:
        clouds = gen_annulus_dataset(cfg.n_per_class, cfg.n_points, cfg.noise_sd, cfg.seed)
        diagrams = h1_diagrams(clouds, cfg.n_max)
        labels = [c.label for c in clouds]
    labels = np.asarray(labels)
    rows = []
    for ell in cfg.levels:
        inflated = [inflate_diagram(d, ell) for d in diagrams]
        L = cfg.padding * max(float(d.persistence.max()) for d in inflated if len(d))
        row = {"ell": ell, "L": L}
        for arm in ("uniform", "fps"):
            featurize = _Arm(arm, diagrams, inflated, cfg)
            res = cross_validate(
                list(range(len(inflated))),
                labels,
                featurize=featurize,
                outer_folds=cfg.outer_folds,
                seeds=(cfg.seed,),
                q_grid=(cfg.q,),
                C_grid=cfg.C_grid,
                inner_folds=cfg.inner_folds,
                tol=cfg.tol,
            )
            row[f"{arm}_mean"] = 100.0 * res.mean
            row[f"{arm}_std"] = 100.0 * res.std
            row[f"{arm}_records"] = res.records
            row[f"{arm}_configs"] = featurize.configs
        row["delta"] = row["fps_mean"] - row["uniform_mean"]
        logger.info("ell=%g L=%.2f uniform=%.1f fps=%.1f", ell, L, row["uniform_mean"], row["fps_mean"])
        rows.append(row)
    return rows


INFLATION_COLUMNS = ["ell", "L", "uniform_mean", "uniform_std", "nonuniform_mean", "nonuniform_std", "delta"]


def write_inflation_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(INFLATION_COLUMNS)
        for r in rows:
            w.writerow(
                [r["ell"], f"{r['L']:.4f}", f"{r['uniform_mean']:.2f}", f"{r['uniform_std']:.2f}",
                 f"{r['fps_mean']:.2f}", f"{r['fps_std']:.2f}", f"{r['delta']:.2f}"]
            )


def synthetic_firing(
    diagrams, labels, K: int = 11, alpha: float = 1.0, delta: float = 0.05, test_frac: float = 0.3, seed: int = 42
) -> list[dict]:
    """Certificate firing rows on a stratified train/test split of a synthetic set.

    Landmarks come from class-aware FPS on the training diagrams, tau from the
    strongest-feature rule.
    """
    from palace.pipeline import stratified_holdout

    labels = np.asarray(labels)
    test = stratified_holdout(labels, test_frac, seed)
    tr, te = np.flatnonzero(~test), np.flatnonzero(test)
    train = [diagrams[i] for i in tr]
    tau = tau_strongest_feature(train)
    by_class = {}
    for i in tr:
        by_class.setdefault(int(labels[i]), []).append(diagrams[i])
    positions, _ = class_aware_fps({c: pool_points(ds) for c, ds in by_class.items()}, K)
    config = LandmarkConfiguration.equal_weights(positions, assign_radii(positions, alpha, tau), tau)
    X = embed_batch(list(diagrams), config)
    stats = fit_class_stats(X[tr], labels[tr])
    return firing_report(stats, X[te], labels[te], delta, "annulus")
