"""Nearest-centroid prediction with a concentration-radius certificate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammainc, gammaincc, gammaln

POWER_TOL = 1e-9
POWER_MAX_ITER = 10_000


def operator_norm(S: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    S = np.asarray(S, dtype=float)
    if S.size == 0 or not np.any(S):
        return 0.0
    # heaviest column as the start vector
    v = S[:, int(np.argmax(np.abs(S).sum(axis=0)))].copy()
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = S @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        new = float(v @ w)
        v = w / nrm
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            return new
        lam = new
    return lam


@dataclass(frozen=True, eq=False)
class ClassStats:
    classes: tuple
    means: np.ndarray  # (k, K)
    cov_opnorm: np.ndarray  # (k,)
    counts: np.ndarray  # (k,)
    class_gap: np.ndarray  # (k,) distance to the nearest other class mean
    R_bar: float
    K: int

    @property
    def k(self) -> int:
        return len(self.classes)

    @property
    def gap(self) -> float:
        return float(self.class_gap.min())

    @property
    def m_min(self) -> int:
        return int(self.counts.min())


def fit_class_stats(X, labels) -> ClassStats:
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    classes = tuple(sorted(set(labels.tolist())))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    means, opn, counts = [], [], []
    for c in classes:
        Xc = X[labels == c]
        mu = Xc.mean(axis=0)
        D = Xc - mu
        means.append(mu)
        opn.append(operator_norm(D.T @ D / len(Xc)))
        counts.append(len(Xc))
    means = np.array(means)
    dist = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=2)
    np.fill_diagonal(dist, np.inf)
    return ClassStats(
        classes=classes,
        means=means,
        cov_opnorm=np.array(opn),
        counts=np.array(counts),
        class_gap=dist.min(axis=1),
        R_bar=float(np.linalg.norm(X, axis=1).max()),
        K=X.shape[1],
    )


def pinelis_radius(R_bar: float, k: int, delta: float, m_min: int) -> float:
    """2 R sqrt(2 log(2k/delta) / m): Hilbert-space Hoeffding with a Bonferroni split."""
    if not 0 < delta < 2 * k:
        raise ValueError("delta must lie in (0, 2k)")
    return 2.0 * R_bar * math.sqrt(2.0 * math.log(2.0 * k / delta) / m_min)


def _chi2_cdf(x, dof):
    return gammainc(dof / 2.0, x / 2.0)


def _chi2_sf(x, dof):
    return gammaincc(dof / 2.0, x / 2.0)


def _chi2_logpdf(x, dof):
    a = dof / 2.0
    return (a - 1.0) * math.log(x) - x / 2.0 - a * math.log(2.0) - gammaln(a)


def chi2_quantile(dof: float, p: float, rtol: float = 1e-13) -> float:
    """x with P(chi2_dof <= x) = p.

    Newton steps on the regularised incomplete gamma, falling back to
    bisection whenever a step leaves the current bracket. For p > 1/2 the
    upper tail is matched instead, which keeps precision near p = 1.
    """
    if not 0 <= p < 1:
        raise ValueError("p must lie in [0, 1)")
    if dof <= 0:
        raise ValueError("dof must be positive")
    if p == 0:
        return 0.0
    if p <= 0.5:
        def h(x):
            return _chi2_cdf(x, dof) - p
    else:
        q = 1.0 - p

        def h(x):
            return q - _chi2_sf(x, dof)

    lo, hi = 0.0, max(1.0, float(dof))
    while h(hi) < 0:
        lo, hi = hi, 2.0 * hi
    x = 0.5 * (lo + hi)
    for _ in range(500):
        f = h(x)
        if f == 0:
            return x
        if f > 0:
            hi = x
        else:
            lo = x
        step = x - f / math.exp(_chi2_logpdf(x, dof))
        x_new = step if lo < step < hi else 0.5 * (lo + hi)
        if abs(x_new - x) <= rtol * x_new:
            return x_new
        x = x_new
    return x


def chi2_upper(dof: float, q: float) -> float:
    """Upper-tail quantile: P(chi2_dof > x) = q."""
    return chi2_quantile(dof, 1.0 - q)


def _chi2_for(stats_K: int, k: int, delta: float, variant: str) -> float:
    if variant == "chi2":
        return chi2_upper(stats_K, delta / k)
    if variant == "univariate":
        return chi2_upper(1, delta / k)
    raise ValueError(f"unknown quantile variant {variant!r}")


def gaussian_radius(stats: ClassStats, delta: float, variant: str = "chi2") -> np.ndarray:
    """Per-class sqrt(||Sigma_c||_op * q / m_c).

    ``variant="chi2"`` uses the K-dof chi-square quantile at level delta/k;
    ``variant="univariate"`` uses the squared normal quantile (chi-square with
    one degree of freedom) at the same level.
    """
    q = _chi2_for(stats.K, stats.k, delta, variant)
    return np.sqrt(stats.cov_opnorm * q / stats.counts)


class CertifiedPrediction(NamedTuple):
    label: object
    certified: bool
    radius: float
    half_gap: float


def certified_predict(
    stats: ClassStats,
    embedding,
    delta: float,
    mode: str = "gaussian",
    per_class: bool = True,
    variant: str = "chi2",
) -> CertifiedPrediction:
    """Nearest centroid; certified only when the radius is below half the class gap."""
    x = np.asarray(embedding, dtype=float)
    d = np.linalg.norm(stats.means - x, axis=1)
    c = int(np.argmin(d))
    if mode == "gaussian":
        r = float(gaussian_radius(stats, delta, variant)[c])
    elif mode == "pinelis":
        r = pinelis_radius(stats.R_bar, stats.k, delta, stats.m_min)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    half = 0.5 * (float(stats.class_gap[c]) if per_class else stats.gap)
    return CertifiedPrediction(stats.classes[c], bool(r < half), r, half)


class SampleThresholds(NamedTuple):
    pinelis: np.ndarray
    gaussian: np.ndarray


def sample_thresholds(
    stats: ClassStats, delta: float, variant: str = "chi2", R_bar: float | None = None
) -> SampleThresholds:
    return sample_thresholds_from(
        stats.class_gap, stats.cov_opnorm, stats.R_bar if R_bar is None else R_bar, stats.k, stats.K, delta, variant
    )


def _ceil_at_least_one(v: np.ndarray) -> np.ndarray:
    return np.where(np.isfinite(v), np.maximum(np.ceil(v), 1.0), np.inf)


def sample_thresholds_from(gap, cov_opnorm, R_bar, k, K, delta, variant="chi2") -> SampleThresholds:
    """Smallest per-class sample sizes at which each radius drops below half the gap.

    Both are ceilings floored at 1.
    """
    gap = np.atleast_1d(np.asarray(gap, dtype=float))
    cov = np.broadcast_to(np.asarray(cov_opnorm, dtype=float), gap.shape)
    q = _chi2_for(K, k, delta, variant)
    with np.errstate(divide="ignore", invalid="ignore"):
        pin = 32.0 * R_bar**2 * math.log(2.0 * k / delta) / gap**2
        gau = 4.0 * cov * q / gap**2
    return SampleThresholds(_ceil_at_least_one(pin), _ceil_at_least_one(gau))


FIRING_COLUMNS = ["dataset", "mode", "fired_pct", "nc_accuracy_on_fired", "r_m", "half_delta"]


def firing_report(stats: ClassStats, X_test, y_test, delta: float, dataset: str, modes=("pinelis", "gaussian"), variant="chi2"):
    """Rows of firing rate and nearest-centroid accuracy on the certified subset."""
    rows = []
    y_test = np.asarray(y_test)
    for mode in modes:
        preds = [certified_predict(stats, x, delta, mode, variant=variant) for x in np.asarray(X_test)]
        fired = np.array([p.certified for p in preds])
        correct = np.array([p.label == t for p, t in zip(preds, y_test)])
        rows.append(
            {
                "dataset": dataset,
                "mode": mode,
                "fired_pct": 100.0 * float(fired.mean()) if len(fired) else math.nan,
                "nc_accuracy_on_fired": 100.0 * float(correct[fired].mean()) if fired.any() else math.nan,
                "r_m": float(np.median([p.radius for p in preds])) if preds else math.nan,
                "half_delta": 0.5 * stats.gap,
            }
        )
    return rows


def write_firing_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=FIRING_COLUMNS)
        w.writeheader()
        w.writerows(rows)
