"""Soft-margin SVM on precomputed grams.

The binary solver is a two-variable working-set method (SMO) that always
updates the maximal violating pair; one-vs-one voting builds the multiclass
model, and :func:`cross_validate` runs the nested stratified CV protocol.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Sequence

import numpy as np
from numba import njit
from sklearn.model_selection import StratifiedKFold

from palace.kernel import bandwidth_quantile, gram_block

logger = logging.getLogger(__name__)

DEFAULT_C_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)
_TAU = 1e-12


@dataclass(frozen=True, eq=False)
class BinarySVMModel:
    dual_coefficients: np.ndarray  # alpha_i * y_i
    bias: float
    support_indices: np.ndarray
    C: float
    alpha: np.ndarray
    kkt_residual: float
    n_iter: int
    objective_trace: list = field(default_factory=list, repr=False)

    def decision(self, gram_rows: np.ndarray) -> np.ndarray:
        """Decision values for rows of kernel values against the training set."""
        return np.asarray(gram_rows) @ self.dual_coefficients + self.bias


def dual_objective(alpha: np.ndarray, y: np.ndarray, G: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ G @ ay)


def _check_psd(G: np.ndarray) -> None:
    scale = max(1.0, float(np.abs(np.diag(G)).max()))
    lam = float(np.linalg.eigvalsh(G).min())
    if lam < -1e-8 * scale * len(G):
        raise ValueError(f"gram is not positive semidefinite (min eigenvalue {lam:.3e})")


@njit(cache=True)
def _smo_loop(Q, y, C, tol, max_iter, record):
    m = len(y)
    alpha = np.zeros(m)
    grad = -np.ones(m)
    trace = np.zeros(max_iter + 1 if record else 1)
    gap = np.inf
    it = 0
    while it < max_iter:
        # maximal violating pair
        i = -1
        j = -1
        vmax = -np.inf
        vmin = np.inf
        for t in range(m):
            v = -y[t] * grad[t]
            if y[t] > 0:
                up = alpha[t] < C
                low = alpha[t] > 0
            else:
                up = alpha[t] > 0
                low = alpha[t] < C
            if up and v > vmax:
                vmax = v
                i = t
            if low and v < vmin:
                vmin = v
                j = t
        gap = vmax - vmin
        if gap <= tol:
            break
        it += 1
        ai = alpha[i]
        aj = alpha[j]
        if y[i] != y[j]:
            quad = max(Q[i, i] + Q[j, j] + 2 * Q[i, j], _TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            elif ai < 0:
                ai = 0.0
                aj = -diff
            if diff > 0:
                if ai > C:
                    ai = C
                    aj = C - diff
            elif aj > C:
                aj = C
                ai = C + diff
        else:
            quad = max(Q[i, i] + Q[j, j] - 2 * Q[i, j], _TAU)
            delta = (grad[i] - grad[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
            elif aj < 0:
                aj = 0.0
                ai = total
            if total > C:
                if aj > C:
                    aj = C
                    ai = total - C
            elif ai < 0:
                ai = 0.0
                aj = total
        dai = ai - alpha[i]
        daj = aj - alpha[j]
        alpha[i] = ai
        alpha[j] = aj
        for t in range(m):
            grad[t] += Q[t, i] * dai + Q[t, j] * daj
        if record:
            # f(alpha) = sum(alpha) - 1/2 alpha.(grad + 1)
            obj = 0.0
            for t in range(m):
                obj += alpha[t] - 0.5 * alpha[t] * (grad[t] + 1.0)
            trace[it] = obj
    if not record:
        return alpha, grad, gap, it, trace[:0]
    return alpha, grad, gap, it, trace[: it + 1]


def solve_binary(
    G,
    y,
    C: float,
    tol: float = 1e-4,
    max_iter: int | None = None,
    check_psd: bool = True,
    record_objective: bool = False,
) -> BinarySVMModel:
    """Maximise sum(alpha) - 1/2 alpha^T Q alpha with Q = yy^T * G,
    subject to 0 <= alpha <= C and alpha . y = 0.

    Stops when the maximal KKT violation m(alpha) - M(alpha) is <= tol.
    """
    G = np.asarray(G, dtype=float)
    y = np.asarray(y, dtype=float)
    m = len(y)
    if G.shape != (m, m):
        raise ValueError("gram shape does not match labels")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ValueError("labels must be +1/-1")
    if (y > 0).all() or (y < 0).all():
        raise ValueError("binary SVM needs both classes")
    if not C > 0:
        raise ValueError("C must be positive")
    if check_psd:
        _check_psd(G)
    if max_iter is None:
        max_iter = max(1_000_000, 1000 * m)

    Q = (y[:, None] * y[None, :]) * G
    alpha, grad, gap, it, trace = _smo_loop(Q, y, float(C), float(tol), int(max_iter), bool(record_objective))
    if gap > tol:
        logger.warning("SMO hit max_iter=%d with KKT gap %.3e", max_iter, gap)
    trace = trace.tolist()
    pos = y > 0
    neg = ~pos

    # bias from the free variables, or the midpoint of the feasible interval
    yg = y * grad
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        rho = float(yg[free].mean())
    else:
        ub_mask = (at_upper & neg) | (at_lower & pos)
        lb_mask = (at_upper & pos) | (at_lower & neg)
        ub = float(yg[ub_mask].min()) if ub_mask.any() else np.inf
        lb = float(yg[lb_mask].max()) if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2.0
    coef = alpha * y
    return BinarySVMModel(
        dual_coefficients=coef,
        bias=0.0 - rho,
        support_indices=np.flatnonzero(alpha > 0),
        C=float(C),
        alpha=alpha,
        kkt_residual=float(max(gap, 0.0)),
        n_iter=it,
        objective_trace=trace,
    )


def predict_margin(model: BinarySVMModel, gram_row) -> float | np.ndarray:
    out = model.decision(gram_row)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class OvOModel:
    classes: tuple
    models: dict  # (c, c') -> (train indices into the fitted set, BinarySVMModel)

    @property
    def k(self) -> int:
        return len(self.classes)


def fit_ovo(G, labels, C: float, tol: float = 1e-4, check_psd: bool = True) -> OvOModel:
    """One binary model per class pair c < c'; class c is the +1 side."""
    G = np.asarray(G, dtype=float)
    labels = np.asarray(labels)
    if check_psd:
        _check_psd(G)
    classes = tuple(sorted(set(labels.tolist())))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    models = {}
    for a, b in combinations(classes, 2):
        idx = np.flatnonzero((labels == a) | (labels == b))
        y = np.where(labels[idx] == a, 1.0, -1.0)
        models[(a, b)] = (idx, solve_binary(G[np.ix_(idx, idx)], y, C, tol, check_psd=False))
    return OvOModel(classes, models)


def predict_ovo(ovo: OvOModel, gram_rows) -> np.ndarray:
    """Majority vote; ties go to the largest summed |margin|, then the lowest class.

    ``gram_rows`` has one row per test item and one column per item of the
    set the model was fitted on.
    """
    rows = np.atleast_2d(np.asarray(gram_rows, dtype=float))
    n, k = len(rows), ovo.k
    pos = {c: t for t, c in enumerate(ovo.classes)}
    votes = np.zeros((n, k), dtype=np.int64)
    strength = np.zeros((n, k))
    for (a, b), (idx, model) in ovo.models.items():
        f = rows[:, idx] @ model.dual_coefficients + model.bias
        win_a = f > 0
        votes[win_a, pos[a]] += 1
        votes[~win_a, pos[b]] += 1
        strength[win_a, pos[a]] += np.abs(f[win_a])
        strength[~win_a, pos[b]] += np.abs(f[~win_a])
    out = np.empty(n, dtype=object)
    cls = np.asarray(ovo.classes, dtype=object)
    for r in range(n):
        best = np.flatnonzero(votes[r] == votes[r].max())
        if len(best) > 1:
            s = strength[r, best]
            best = best[s == s.max()]
        out[r] = cls[best[0]]
    try:
        return out.astype(np.asarray(ovo.classes).dtype)
    except (TypeError, ValueError):
        return out


# -- cross-validation --------------------------------------------------------


def stratified_folds(labels, n_folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic stratified (train, test) index splits."""
    labels = np.asarray(labels)
    values, counts = np.unique(labels, return_counts=True)
    for c, n in zip(values, counts):
        if n < n_folds:
            raise ValueError(f"class {c.item()!r} has {n} samples, fewer than {n_folds} folds; some fold would lack it")
    skf = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=seed)
    return [(tr, te) for tr, te in skf.split(np.zeros(len(labels)), labels)]


@dataclass
class FoldRecord:
    seed: int
    fold: int
    sigma_or_q: float
    sigma: float
    C: float
    train_acc: float
    test_acc: float
    leaky: bool = False


@dataclass
class CVResult:
    mean: float
    std: float
    records: list[FoldRecord]

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "fold", "sigma_or_q", "C", "train_acc", "test_acc"])
            for r in self.records:
                w.writerow([r.seed, r.fold, repr(r.sigma_or_q), repr(r.C), repr(r.train_acc), repr(r.test_acc)])


def _kernel_matrix(X, Y, sigma, kind):
    if kind == "landmark":
        return gram_block(X, Y, sigma)
    if kind == "rbf":
        sq = ((X[:, None, :] - Y[None, :, :]) ** 2).sum(axis=2)
        return np.exp(-sq / (2.0 * sigma * sigma))
    if kind == "linear":
        return X @ Y.T
    raise ValueError(f"unknown kernel {kind!r}")


def _quantile_or_unit(E, q) -> float:
    # a constant training embedding makes every bandwidth give the same
    # constant gram; fall back to 1 so the classifier can still be fitted
    try:
        return bandwidth_quantile(E, q)
    except ValueError:
        logger.warning("constant training embedding; using bandwidth 1")
        return 1.0


def _accuracy(pred, truth) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(truth)))


def cross_validate(
    items,
    labels,
    *,
    featurize: Callable | None = None,
    outer_folds: int = 10,
    seeds: Sequence[int] = (42,),
    sigma_grid: Sequence[float] | None = None,
    q_grid: Sequence[float] | None = None,
    C_grid: Sequence[float] = DEFAULT_C_GRID,
    inner_folds: int = 3,
    kernel: str = "landmark",
    tol: float = 1e-4,
) -> CVResult:
    """Nested stratified CV.

    ``featurize(train_items, train_labels)`` must return a function mapping a
    list of items to an embedding matrix; it is called on each outer training
    fold only, so landmarks never see test data. Without it ``items`` is taken
    to be a fixed embedding matrix and every record is flagged leaky.

    Bandwidths come from ``sigma_grid`` or, per outer fold, from the
    ``q_grid`` quantiles of training-fold embedding distances. The inner CV
    picks (bandwidth, C) by mean accuracy, ties going to smaller C and then
    to the smaller bandwidth.
    """
    labels = np.asarray(labels)
    if (sigma_grid is None) == (q_grid is None) and kernel != "linear":
        raise ValueError("give exactly one of sigma_grid or q_grid")
    if not C_grid:
        raise ValueError("C_grid is empty")
    if outer_folds < 2 or inner_folds < 2:
        raise ValueError("need at least two folds")
    records: list[FoldRecord] = []
    for seed in seeds:
        for fold, (tr, te) in enumerate(stratified_folds(labels, outer_folds, seed)):
            if featurize is None:
                X = np.asarray(items, dtype=float)
                E_tr, E_te = X[tr], X[te]
            else:
                train_items = [items[i] for i in tr]
                transform = featurize(train_items, labels[tr])
                E_tr = np.asarray(transform(train_items))
                E_te = np.asarray(transform([items[i] for i in te]))
            if kernel == "linear":
                bandwidths = [(np.nan, np.nan)]
            elif q_grid is not None:
                bandwidths = [(q, _quantile_or_unit(E_tr, q)) for q in q_grid]
            else:
                bandwidths = [(s, s) for s in sigma_grid]
            y_tr = labels[tr]
            inner = stratified_folds(y_tr, inner_folds, seed)
            scored = []
            grams = {}
            for b_idx, (tag, sigma) in enumerate(bandwidths):
                G_tr = _kernel_matrix(E_tr, E_tr, sigma, kernel)
                grams[b_idx] = G_tr
                for C in C_grid:
                    accs = []
                    for itr, ite in inner:
                        model = fit_ovo(G_tr[np.ix_(itr, itr)], y_tr[itr], C, tol, check_psd=False)
                        accs.append(_accuracy(predict_ovo(model, G_tr[np.ix_(ite, itr)]), y_tr[ite]))
                    scored.append((-float(np.mean(accs)), C, sigma if sigma == sigma else 0.0, b_idx))
            _, C_best, _, b_best = min(scored)
            tag, sigma = bandwidths[b_best]
            G_tr = grams[b_best]
            model = fit_ovo(G_tr, y_tr, C_best, tol, check_psd=False)
            train_acc = _accuracy(predict_ovo(model, G_tr), y_tr)
            G_te = _kernel_matrix(E_te, E_tr, sigma, kernel)
            test_acc = _accuracy(predict_ovo(model, G_te), labels[te])
            records.append(
                FoldRecord(seed, fold, float(tag), float(sigma), float(C_best), train_acc, test_acc, featurize is None)
            )
    accs = np.array([r.test_acc for r in records])
    return CVResult(float(accs.mean()), float(accs.std()), records)
