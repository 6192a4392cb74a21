"""The additive landmark kernel and quantities derived from it."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import pdist

from palace.cover import LandmarkConfiguration, rho_nu


@dataclass(frozen=True, eq=False)
class GramMatrix:
    entries: np.ndarray
    sigma: float
    K: int

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError("gram must be square")
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries).min()) if self.m else 0.0

    def save(self, path) -> None:
        """CSV matrix plus a ``.json`` sidecar holding sigma, K and m."""
        np.savetxt(path, self.entries, delimiter=",", fmt="%.17g")
        with open(f"{path}.json", "w") as fh:
            json.dump({"sigma": self.sigma, "K": self.K, "m": self.m}, fh)

    @classmethod
    def load(cls, path) -> "GramMatrix":
        with open(f"{path}.json") as fh:
            meta = json.load(fh)
        entries = np.loadtxt(path, delimiter=",", ndmin=2).reshape(meta["m"], meta["m"])
        return cls(entries, meta["sigma"], meta["K"])


def lk_value(u, v, sigma: float) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(np.exp(-((u - v) ** 2) / (2.0 * sigma * sigma)).sum())


def gram_block(X: np.ndarray, Y: np.ndarray, sigma: float, block: int = 64) -> np.ndarray:
    """Landmark-kernel values between the rows of X and Y.

    Accumulates over coordinate blocks so memory is O(|X| |Y| block).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.shape[1] != Y.shape[1]:
        raise ValueError("embedding dimensions differ")
    out = np.zeros((len(X), len(Y)))
    scale = -1.0 / (2.0 * sigma * sigma)
    for s in range(0, X.shape[1], block):
        diff = X[:, None, s : s + block] - Y[None, :, s : s + block]
        out += np.exp(scale * diff * diff).sum(axis=2)
    return out


def gram(embeddings, sigma: float, block: int = 64) -> GramMatrix:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    X = np.asarray(embeddings, dtype=float)
    return GramMatrix(gram_block(X, X, sigma, block), float(sigma), X.shape[1])


def rkhs_distance(u, v, sigma: float) -> float:
    """sqrt(k(u,u) + k(v,v) - 2k(u,v)), written as a sum of per-coordinate terms."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    g = 2.0 * (1.0 - np.exp(-((u - v) ** 2) / (2.0 * sigma * sigma)))
    return math.sqrt(float(g.sum()))


def bandwidth_quantile(embeddings, q: float) -> float:
    """q-quantile (linear interpolation) of the non-zero pairwise l2 distances."""
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    d = pdist(np.asarray(embeddings, dtype=float))
    d = d[d > 0]
    if len(d) == 0:
        raise ValueError("degenerate embedding: all pairwise distances are zero")
    return float(np.quantile(d, q))


class NondegeneracyFloor(NamedTuple):
    floor: float
    kappa: float
    rho_nu: float
    regime_ok: bool


def nondegeneracy_floor(config: LandmarkConfiguration, sigma: float, n_max: int) -> NondegeneracyFloor:
    """kappa * rho_nu with kappa = 1/(sigma sqrt 2); ``regime_ok`` reports
    whether sigma >= sqrt(2) * n_max * tau."""
    kappa = 1.0 / (sigma * math.sqrt(2.0))
    rho = rho_nu(config)
    regime = sigma >= math.sqrt(2.0) * n_max * config.tau * (1 - 1e-12)
    return NondegeneracyFloor(kappa * rho, kappa, rho, bool(regime))
