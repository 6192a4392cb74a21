"""Closed-form selection statistics computed from a gram matrix."""

from __future__ import annotations

import math
from itertools import combinations
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.stats import rankdata

from palace.diagram import PersistenceDiagram, bottleneck_distance

LW_CLAMP = (0.05, 1.0)


class SelectorReport(NamedTuple):
    gamma_hat: float
    score: float
    fisher_ker: float
    rho_mah: float
    tau_hat: float
    rho_nu_hat: float


def _blocks(G, labels):
    G = np.asarray(G, dtype=float)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    idx = {c: np.flatnonzero(labels == c) for c in classes}
    return G, classes, idx


def _mean_gap_sq(G, ia, ib) -> float:
    return (
        G[np.ix_(ia, ia)].mean() + G[np.ix_(ib, ib)].mean() - 2.0 * G[np.ix_(ia, ib)].mean()
    )


def pairwise_mean_distances(G, labels) -> dict:
    """||mu_c - mu_c'|| in the feature space for every class pair, from gram blocks."""
    G, classes, idx = _blocks(G, labels)
    return {
        (a, b): math.sqrt(max(_mean_gap_sq(G, idx[a], idx[b]), 0.0)) for a, b in combinations(classes, 2)
    }


def kernel_margin_hat(G, labels) -> float:
    """Half the smallest distance between empirical class mean embeddings."""
    return 0.5 * min(pairwise_mean_distances(G, labels).values())


def score(gamma_hat: float, K: int) -> float:
    return gamma_hat / math.sqrt(K)


def fisher_ker(G, labels) -> float:
    """min over pairs of ||mu_c - mu_c'||^2 / (2 * pooled class-covariance trace).

    Returns ``inf`` when every class has zero spread.
    """
    G, classes, idx = _blocks(G, labels)
    traces = [np.diag(G)[idx[c]].mean() - G[np.ix_(idx[c], idx[c])].mean() for c in classes]
    pooled = max(float(np.mean(traces)), 0.0)
    num = min(max(_mean_gap_sq(G, idx[a], idx[b]), 0.0) for a, b in combinations(classes, 2))
    if pooled <= 1e-15 * max(1.0, float(np.abs(np.diag(G)).max())):
        return math.inf
    return num / (2.0 * pooled)


def feature_coordinates(G, rel_tol: float = 1e-10) -> np.ndarray:
    """Rows Z with Z Z^T = G, restricted to the numerically non-null eigenspace."""
    G = np.asarray(G, dtype=float)
    w, U = np.linalg.eigh((G + G.T) / 2.0)
    keep = w > rel_tol * max(float(w.max()), 0.0)
    return U[:, keep] * np.sqrt(w[keep])


def ledoit_wolf_intensity(X: np.ndarray) -> float:
    """Ledoit-Wolf shrinkage toward mu*I for already-centred rows X (n x p)."""
    n, p = X.shape
    S = X.T @ X / n
    mu = np.trace(S) / p
    d2 = ((S - mu * np.eye(p)) ** 2).sum() / p
    if d2 <= 0:
        return 1.0
    X2 = X * X
    b2_bar = ((X2.T @ X2) / n - S * S).sum() / (p * n)
    b2 = min(b2_bar, d2)
    return float(b2 / d2)


def mahalanobis_margin(
    G,
    labels,
    shrinkage: float | None = None,
    target: str = "scaled-identity",
    coords: str = "feature",
) -> float:
    """Smallest class-mean separation in the inverse pooled within-class covariance metric.

    ``coords="sample"`` is the kernel-FDA form: N = sum_c G_c (I - J/m_c) G_c^T / (k m_c)
    over the gram columns of each class, d = G (1_c/m_c - 1_c'/m_c'), and
    rho = sqrt(d^T N_lam^{-1} d). ``coords="feature"`` does the same in exact
    feature coordinates of the gram (eigendecomposition). Both agree when no
    shrinkage is applied; they differ in what the target means, and only the
    feature form shrinks in the space the Ledoit-Wolf intensity is estimated in.

    N is shrunk toward ``target`` ("scaled-identity": tr(N)/dim * I, or
    "identity": I) with the Ledoit-Wolf intensity of the feature-coordinate
    residuals clamped to [0.05, 1], unless ``shrinkage`` is given. One
    Cholesky factorisation serves every class pair.
    """
    G, classes, idx = _blocks(G, labels)
    m, k = len(G), len(classes)
    if m < k + 2:
        raise ValueError(f"need m >= k + 2 samples (m={m}, k={k})")
    Z = feature_coordinates(G)
    if Z.shape[1] == 0:
        return 0.0
    if shrinkage is None:
        centred = np.concatenate([Z[idx[c]] - Z[idx[c]].mean(axis=0) for c in classes])
        lam = float(np.clip(ledoit_wolf_intensity(centred), *LW_CLAMP))
    else:
        lam = float(shrinkage)
    if coords == "feature":
        X = Z
        means = {c: Z[idx[c]].mean(axis=0) for c in classes}
        N = sum(np.cov(Z[idx[c]].T, bias=True).reshape(Z.shape[1], -1) for c in classes) / k
    elif coords == "sample":
        X = G
        means = {c: G[:, idx[c]].mean(axis=1) for c in classes}
        N = np.zeros((m, m))
        for c in classes:
            Gc = G[:, idx[c]] - means[c][:, None]
            N += Gc @ Gc.T / (k * len(idx[c]))
    else:
        raise ValueError(f"unknown coordinates {coords!r}")
    dim = X.shape[1] if coords == "feature" else m
    if target == "scaled-identity":
        T = np.trace(N) / dim * np.eye(dim)
    elif target == "identity":
        T = np.eye(dim)
    else:
        raise ValueError(f"unknown shrinkage target {target!r}")
    N_lam = (1.0 - lam) * N + lam * T
    try:
        factor = cho_factor(N_lam, lower=True)
    except LinAlgError as exc:
        raise ValueError("shrunk pooled covariance is not positive definite") from exc
    best = math.inf
    for a, b in combinations(classes, 2):
        d = means[a] - means[b]
        best = min(best, math.sqrt(max(float(d @ cho_solve(factor, d)), 0.0)))
    return best


def tau_hat(
    diagrams: Sequence[PersistenceDiagram], labels, n_pairs: int = 50, quantile: float = 0.10, seed: int = 0
) -> float:
    """Quantile of bottleneck distances over cross-class pairs sampled without replacement."""
    labels = np.asarray(labels)
    ii, jj = np.triu_indices(len(diagrams), k=1)
    cross = labels[ii] != labels[jj]
    ii, jj = ii[cross], jj[cross]
    if len(ii) == 0:
        raise ValueError("no cross-class pairs")
    rng = np.random.default_rng(seed)
    pick = rng.choice(len(ii), size=min(n_pairs, len(ii)), replace=False)
    d = [bottleneck_distance(diagrams[ii[t]], diagrams[jj[t]])[0] for t in pick]
    return float(np.quantile(d, quantile))


def rho_nu_hat(tau: float, K: int) -> float:
    return tau / (4.0 * math.sqrt(K))


def spearman(xs, ys) -> float:
    """Rank correlation, tied values sharing their average rank."""
    rx = rankdata(xs)
    ry = rankdata(ys)
    if len(rx) != len(ry) or len(rx) < 2:
        raise ValueError("need two equal-length sequences of length >= 2")
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0:
        return math.nan
    return float(np.clip(rx @ ry / denom, -1.0, 1.0))


def selector_report(G, labels, K: int, diagrams=None, tau_kwargs=None) -> SelectorReport:
    g = kernel_margin_hat(G, labels)
    t = tau_hat(diagrams, labels, **(tau_kwargs or {})) if diagrams is not None else math.nan
    return SelectorReport(
        gamma_hat=g,
        score=score(g, K),
        fisher_ker=fisher_ker(G, labels),
        rho_mah=mahalanobis_margin(G, labels),
        tau_hat=t,
        rho_nu_hat=rho_nu_hat(t, K) if t == t else math.nan,
    )
