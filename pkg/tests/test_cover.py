import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_kcenter
from palace.cover import (
    LandmarkConfiguration,
    assign_radii,
    audit_certificate,
    audit_noninterference,
    budget_bounds,
    check_admissibility,
    class_aware_fps,
    class_budgets,
    covering_radius,
    fps_place,
    fps_seed_sweep,
    grid_counts,
    lebesgue_number,
    matched_uniform_grid,
    rho_eff,
    rho_nu,
    rho_nu_is_degenerate,
    tau_median_half_persistence,
    tau_pair_quantile,
    tau_strongest_feature,
    uniform_grid,
)
from palace.diagram import PersistenceDiagram, point_bottleneck, point_distances


def random_points(rng, n):
    b = rng.uniform(0, 4, n)
    return np.column_stack([b, b + rng.uniform(0, 3, n)])


# -- configuration type --------------------------------------------------------


def test_weights_must_be_normalised():
    with pytest.raises(ValueError):
        LandmarkConfiguration([[0, 1], [0, 2]], [1, 1], [0.5, 0.5], 1.0)
    LandmarkConfiguration([[0, 1], [0, 2]], [1, 1], [0.6, 0.8], 1.0)


def test_json_roundtrip(rng):
    cfg = LandmarkConfiguration.equal_weights(random_points(rng, 5), rng.uniform(0.1, 1, 5), 0.7)
    back = LandmarkConfiguration.from_json(cfg.to_json())
    assert np.array_equal(back.positions, cfg.positions)
    assert np.array_equal(back.radii, cfg.radii)
    assert np.array_equal(back.weights, cfg.weights)
    assert back.tau == cfg.tau
    assert set(__import__("json").loads(cfg.to_json())) == {"tau", "landmarks"}


def test_equal_weights_maximise_min_weight(rng):
    for K in (2, 5, 17):
        for _ in range(50):
            w = np.abs(rng.normal(size=K))
            w /= np.linalg.norm(w)
            assert w.min() <= K**-0.5 + 1e-15


# -- FPS -----------------------------------------------------------------------


def test_fps_one_dimensional_example():
    # far from the diagonal the metric is plain l-infinity
    pts = [(0, 20), (1, 20), (9, 20), (10, 20)]
    pos, ins = fps_place(pts, 2, 0)
    assert pos[1].tolist() == [10, 20]
    assert covering_radius(pos, pts) == pytest.approx(1.0)
    assert brute_kcenter(pts, 2, point_bottleneck) == pytest.approx(1.0)


def test_fps_trivial_budgets(rng):
    pts = random_points(rng, 7)
    pos, _ = fps_place(pts, 7)
    assert covering_radius(pos, pts) == 0
    pos, _ = fps_place(pts, 1, 3)
    assert covering_radius(pos, pts) == pytest.approx(point_distances(pts, pts[3:4]).max())
    with pytest.raises(ValueError):
        fps_place(pts, 8)


def test_fps_ties_to_lowest_index():
    pts = [(0, 2), (0, 4), (0, 4)]
    pos, _ = fps_place(pts, 2)
    idx = [i for i, p in enumerate(pts) if tuple(pos[1]) == p]
    assert idx[0] == 1


def test_fps_insertion_non_increasing_and_two_approx(rng):
    for _ in range(200):
        n = int(rng.integers(2, 13))
        K = int(rng.integers(1, min(4, n) + 1))
        pts = random_points(rng, n)
        pos, ins = fps_place(pts, K, 0)
        assert np.isinf(ins[0])
        assert np.all(np.diff(ins[1:]) <= 0)
        opt = brute_kcenter([tuple(p) for p in pts], K, point_bottleneck)
        assert covering_radius(pos, pts) <= 2 * opt + 1e-12


def test_seed_sweep(rng):
    pts = random_points(rng, 10)
    runs = fps_seed_sweep(pts, 3, [0, 4])
    assert runs[0][0][0].tolist() == pts[0].tolist()
    assert runs[1][0][0].tolist() == pts[4].tolist()


# -- class-aware ---------------------------------------------------------------


@pytest.mark.parametrize(
    "counts, K, expected",
    [
        ({0: 5, 1: 5}, 4, {0: 2, 1: 2}),
        ({c: 100 for c in range(5)}, 200, {c: 40 for c in range(5)}),
        ({0: 9, 1: 9, 2: 9}, 7, {0: 3, 1: 2, 2: 2}),
        ({0: 1, 1: 9, 2: 9}, 7, {0: 1, 1: 4, 2: 2}),
        ({0: 1, 1: 1}, 4, {0: 1, 1: 1}),
    ],
)
def test_class_budgets(counts, K, expected):
    assert class_budgets(counts, K) == expected


def test_class_budgets_needs_one_per_class():
    with pytest.raises(ValueError):
        class_budgets({0: 3, 1: 3, 2: 3}, 2)


def test_class_aware_fps(rng):
    by_class = {0: random_points(rng, 6), 1: random_points(rng, 6) + 10}
    pos, short = class_aware_fps(by_class, 4)
    assert not short
    assert pos[0].tolist() == by_class[0][0].tolist()
    assert pos[2].tolist() == by_class[1][0].tolist()
    pos, short = class_aware_fps({0: random_points(rng, 1), 1: random_points(rng, 2)}, 5)
    assert short and len(pos) == 3


# -- radii ---------------------------------------------------------------------


def test_assign_radii_examples(rng):
    pts = random_points(rng, 6)
    assert assign_radii(pts, 0.0, 1.0) == pytest.approx(np.full(6, 0.5))
    assert assign_radii(pts, 1e9, 1.0) == pytest.approx(np.full(6, 4.0))
    two = [(0, 10), (1, 10)]
    assert assign_radii(two, 0.75, 1.0) == pytest.approx([0.75, 0.75])
    assert assign_radii([(0, 1)], 1.0, 0.3) == pytest.approx([0.15])


# -- grids ---------------------------------------------------------------------


def test_grid_excludes_diagonal():
    g = uniform_grid(2.0, 1.0)
    assert g.positions.tolist() == [[0, 1], [0, 2], [1, 2]]
    assert (g.positions[:, 1] > g.positions[:, 0]).all()
    assert g.radii == pytest.approx([1.5] * 3)
    assert g.weights == pytest.approx([3**-0.5] * 3)
    assert grid_counts(2.0, 1.0) == (3, 9)


def test_grid_smaller_than_spacing():
    with pytest.raises(ValueError):
        uniform_grid(0.5, 1.0)


def test_matched_grid_has_exactly_K():
    cfg, R = matched_uniform_grid(8.4, 11)
    assert cfg.K == 11
    assert R == pytest.approx(8.4 / 5)
    assert (cfg.positions[:, 1] > cfg.positions[:, 0]).all()
    assert cfg.radii == pytest.approx(np.full(11, 1.5 * R))
    for K in range(1, 30):
        assert matched_uniform_grid(3.0, K)[0].K == K


def test_grid_lebesgue_number_is_spacing():
    L, R = 4.0, 1.0
    g = uniform_grid(L, R)
    s = np.linspace(0, L, 81)
    bb, dd = np.meshgrid(s, s)
    support = np.column_stack([bb.ravel(), dd.ravel()])
    support = support[support[:, 1] > support[:, 0]]
    assert lebesgue_number(g, support) == pytest.approx(R)


@pytest.mark.parametrize("R_over_tau", [0.25, 0.35, 0.5])
def test_grid_in_window_is_admissible(R_over_tau):
    tau = 1.0
    R = R_over_tau * tau
    g = uniform_grid(4.0, R, tau=tau)
    s = np.linspace(0, 4.0, 41)
    bb, dd = np.meshgrid(s, s)
    support = np.column_stack([bb.ravel(), dd.ravel()])
    support = support[support[:, 1] > support[:, 0]]
    assert check_admissibility(g, support).admissible


# -- cover geometry ------------------------------------------------------------


def test_lebesgue_examples():
    cfg = LandmarkConfiguration.equal_weights([(0, 2)], 0.7, 1.0)
    assert lebesgue_number(cfg, [(0, 2)]) == pytest.approx(0.7)
    assert lebesgue_number(cfg, [(0, 2.7)]) == pytest.approx(0.0)


def test_lebesgue_is_largest_uniform_shrink(rng):
    for _ in range(100):
        pos = random_points(rng, 4)
        cfg = LandmarkConfiguration.equal_weights(pos, rng.uniform(0.5, 2, 4), 1.0)
        support = random_points(rng, 8)
        lam = lebesgue_number(cfg, support)
        d = point_distances(support, cfg.positions)

        def covered(rho):
            return bool(((d < cfg.radii - rho) | (d == 0) & (cfg.radii - rho > 0)).any(axis=1).all())

        if lam > 1e-9:
            assert covered(lam - 1e-9)
        assert not covered(lam + 1e-9)


def test_admissibility_examples():
    tau = 1.0
    pts = np.array([(0, 4), (0.1, 4.1), (0.2, 4.2)])
    cfg = LandmarkConfiguration.equal_weights(pts[:1], tau / 2, tau)
    rep = check_admissibility(cfg, pts)
    assert rep.admissible and rep.lebesgue >= tau / 4
    low = LandmarkConfiguration.equal_weights(pts[:1], 0.2, tau)
    assert not check_admissibility(low, pts).cond_shrink


def test_admissible_chain(rng):
    for _ in range(200):
        tau = rng.uniform(0.2, 2)
        cfg = LandmarkConfiguration.equal_weights(random_points(rng, 3), rng.uniform(0.05, 2, 3), tau)
        rep = check_admissibility(cfg, random_points(rng, 5))
        if rep.admissible:
            assert rep.lebesgue <= cfg.radii.max() <= tau + 1e-12


def test_rho_nu_examples():
    cfg = LandmarkConfiguration.equal_weights([(0, 1), (0, 2), (0, 3), (0, 4)], 0.5, 1.0)
    assert rho_nu(cfg) == pytest.approx(1.0 / (4 * 2))
    tiny = LandmarkConfiguration.equal_weights([(0, 1), (0, 2)], 0.1, 1.0)
    assert rho_nu(tiny) == 0.0 and rho_nu_is_degenerate(tiny)
    mixed = LandmarkConfiguration([(0, 1), (0, 2)], [0.1, 0.5], [0.6, 0.8], 1.0)
    assert rho_nu(mixed) == pytest.approx(0.25 * 0.8)


def test_rho_eff_uniform_radii(rng):
    pos = random_points(rng, 5)
    support = random_points(rng, 20)
    r = covering_radius(pos, support) + 0.3
    cfg = LandmarkConfiguration.equal_weights(pos, r, 1.0)
    assert rho_eff(cfg, support) == pytest.approx((r - covering_radius(pos, support)) / math.sqrt(5))


def test_budget_bounds():
    assert budget_bounds(1.0, 8.0, 0.5)[:3] == (64, 1024, pytest.approx(1 / 16))
    b = budget_bounds(2.0, 2.0, 1.0)
    assert b.ratio == 4 and not b.informative
    with pytest.raises(OverflowError):
        budget_bounds(1.0, 1.0, 1e-300)


# -- tau rules -----------------------------------------------------------------


def test_tau_rules():
    ds = [PersistenceDiagram([(0, 2), (0, 1)]), PersistenceDiagram([(0, 4)])]
    assert tau_strongest_feature(ds) == pytest.approx((1 + 2) / 2)
    assert tau_median_half_persistence(ds) == pytest.approx(1.0)
    same = [PersistenceDiagram([(0, 1)]), PersistenceDiagram([(0, 3)]), PersistenceDiagram([(0, 5)])]
    # pairwise distances 1.5, 2.5, 2.0
    assert tau_pair_quantile(same, 0.0) == pytest.approx(1.5)


# -- audits --------------------------------------------------------------------


def test_noninterference_examples():
    A = PersistenceDiagram([(0, 3), (0, 6)])
    assert not audit_noninterference(A, A).auditable
    one = audit_noninterference(PersistenceDiagram([(0, 3)]), PersistenceDiagram([(0.1, 3)]))
    assert one.passes and one.min_cross_ratio == math.inf
    d = 0.1
    B = PersistenceDiagram([(d, 3), (0, 6 + d)])
    res = audit_noninterference(A, B)
    assert res.d == pytest.approx(d)
    assert res.passes and res.within_scale_ok and res.min_cross_ratio > 10
    close = PersistenceDiagram([(0, 3), (0, 3.15)])
    res = audit_noninterference(close, PersistenceDiagram([(0.1, 3), (0.1, 3.15)]))
    assert res.auditable and not res.passes


def test_noninterference_unequal_sizes_not_auditable():
    res = audit_noninterference(PersistenceDiagram([(0, 3)]), PersistenceDiagram([(0, 3), (0, 9)]))
    assert not res.auditable


def test_audit_certificate_summary():
    tau = 0.35
    cfg = LandmarkConfiguration.equal_weights([(0, 3), (0, 3.4)], 0.3, tau)
    A = PersistenceDiagram([(0, 3)])
    B = PersistenceDiagram([(0, 3.4)])
    near = PersistenceDiagram([(0, 3.05)])
    s = audit_certificate([(A, B), (A, near)], cfg)
    assert s["n_pairs"] == 2 and s["n_tau"] == 1
    assert s["bound_pct"] == 100.0 and s["min"] >= 1


@given(st.integers(1, 40))
def test_matched_grid_lattice_spacing(K):
    cfg, R = matched_uniform_grid(5.0, K)
    diffs = np.unique(np.round(np.concatenate([cfg.positions[:, 0], cfg.positions[:, 1]]) / R, 9))
    assert np.allclose(diffs, np.round(diffs))
