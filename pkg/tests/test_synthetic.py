import numpy as np
import pytest

from palace.certify import FIRING_COLUMNS
from palace.diagram import PersistenceDiagram
from palace.synthetic import (
    INNER_RADII,
    InflationConfig,
    gen_annulus,
    gen_annulus_dataset,
    h1_diagrams,
    inflate_diagram,
    run_domain_inflation,
    synthetic_firing,
)


def test_annulus_without_noise_stays_inside():
    for c, r_in in enumerate(INNER_RADII):
        r = np.linalg.norm(gen_annulus(c, 500, 0.0, seed=c).points, axis=1)
        assert r.min() >= r_in - 1e-12 and r.max() <= 1 + 1e-12


def test_disk_class_reaches_centre():
    r = np.linalg.norm(gen_annulus(3, 2000, 0.0, seed=1).points, axis=1)
    assert r.min() < 0.05


def test_mean_radius_follows_inner_radius():
    means = {r_in: np.linalg.norm(gen_annulus(c, 10_000, 0.08, seed=7).points, axis=1).mean()
             for c, r_in in enumerate(INNER_RADII)}
    ordered = [means[r] for r in sorted(means)]
    assert ordered == sorted(ordered)


def test_determinism_and_stream_split():
    a = gen_annulus_dataset(3, 20, seed=5)
    b = gen_annulus_dataset(3, 20, seed=5)
    assert all(np.array_equal(x.points, y.points) for x, y in zip(a, b))
    assert [c.label for c in a] == [0] * 3 + [1] * 3 + [2] * 3 + [3] * 3
    # cloud i only depends on its own stream index
    c = gen_annulus_dataset(5, 20, seed=5)
    assert np.array_equal(a[1].points, c[1].points)
    assert not np.array_equal(a[0].points, a[1].points)


def test_inflate():
    A = PersistenceDiagram([(0.1, 0.5)])
    assert inflate_diagram(A, 0.0) is A
    B = inflate_diagram(A, 1.0)
    assert len(B) == 2 and B.points[-1].tolist() == [0.0, 1.0]


@pytest.fixture(scope="module")
def small_diagrams():
    clouds = gen_annulus_dataset(8, 30, seed=3)
    return h1_diagrams(clouds, 30), np.array([c.label for c in clouds])


def test_inflation_rows(small_diagrams):
    diagrams, labels = small_diagrams
    cfg = InflationConfig(levels=(1.0, 8.0), outer_folds=2, inner_folds=2, C_grid=(1.0, 10.0))
    rows = run_domain_inflation(cfg, diagrams, labels)
    assert [r["ell"] for r in rows] == [1.0, 8.0]
    for r in rows:
        assert r["L"] >= 1.05 * r["ell"] - 1e-12
        assert all(c.K == 11 for c in r["uniform_configs"] + r["fps_configs"])
        assert r["delta"] == pytest.approx(r["fps_mean"] - r["uniform_mean"])
        assert 0 <= r["uniform_mean"] <= 100


def test_synthetic_firing_schema(small_diagrams):
    diagrams, labels = small_diagrams
    rows = synthetic_firing(diagrams, labels)
    assert [r["mode"] for r in rows] == ["pinelis", "gaussian"]
    assert all(set(r) == set(FIRING_COLUMNS) for r in rows)
