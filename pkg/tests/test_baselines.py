import numpy as np
import pytest
from scipy.linalg import det, solve

from radiolam.baselines import (
    VariogramModel,
    default_rbf_width,
    empirical_variogram,
    fit_variogram,
    kriging3d_estimate,
    kriging_weights,
    plane_points,
    rbf3d_estimate,
    rbf_eval,
    rbf_weights,
)
from radiolam.scene import GridSpec, Sample, SampleSet, SceneGenConfig, draw_samples, generate_scene

GRID = GridSpec()


def random_samples(k, seed, h=None):
    rng = np.random.default_rng(seed)
    cells = rng.choice(32 * 32 * 3, size=k, replace=False)
    xs, ys, hs = np.unravel_index(cells, (32, 32, 3))
    if h is not None:
        hs = np.full(k, h)
    return SampleSet([Sample(int(x), int(y), int(z), float(rng.random())) for x, y, z in zip(xs, ys, hs)], GRID)


@pytest.mark.parametrize("estimator", [rbf3d_estimate, kriging3d_estimate])
def test_exact_at_samples(estimator):
    scene = generate_scene(SceneGenConfig(env_label="urban"), 3)
    samples = draw_samples(scene, 16, 2)
    for h in range(3):
        est = estimator(samples, h)
        for s in samples.at_height(h):
            assert est[s.x, s.y] == pytest.approx(s.rss, abs=1e-6)


def test_rbf_single_sample():
    s = SampleSet([Sample(10, 12, 1, 0.6)], GRID)
    est = rbf3d_estimate(s, 1)
    width = default_rbf_width(s.coords(), GRID)
    xs, ys = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    kernel = np.exp(-((xs - 10) ** 2 + (ys - 12) ** 2) / (2 * width**2))
    assert est[10, 12] == pytest.approx(0.6, abs=1e-6)
    assert np.allclose(est, 0.6 * kernel, atol=1e-6)
    with pytest.raises(ValueError):
        rbf3d_estimate(SampleSet([], GRID), 0)


def test_rbf_matches_dense_solve():
    s = random_samples(5, 1)
    c = s.coords()
    width = 4.0
    w = rbf_weights(c, s.rss, width)
    A = np.array([[np.exp(-np.sum((a - b) ** 2) / (2 * width**2)) for b in c] for a in c]) + 1e-8 * np.eye(5)
    w_ref = solve(A, s.rss)
    probes = np.random.default_rng(2).random((10, 3)) * [31, 31, 20]
    ref = np.array([sum(wi * np.exp(-np.sum((p - ci) ** 2) / (2 * width**2)) for wi, ci in zip(w_ref, c)) for p in probes])
    assert np.allclose(rbf_eval(probes, c, w, width), ref, atol=1e-9)


def test_constant_field_kriging():
    s = SampleSet([Sample(x, y, h, 0.42) for x, y, h in [(1, 1, 0), (5, 20, 1), (30, 3, 2), (17, 17, 0)]], GRID)
    for h in range(3):
        assert np.allclose(kriging3d_estimate(s, h), 0.42, atol=1e-12)
    with pytest.raises(ValueError):
        kriging3d_estimate(SampleSet([Sample(1, 1, 0, 0.5)], GRID), 0)


@pytest.mark.parametrize("kind", ["exponential", "spherical"])
def test_kriging_weights_sum_to_one(kind):
    s = random_samples(16, 4)
    vg = fit_variogram(s.coords(), s.rss, kind)
    w = kriging_weights(s.coords(), plane_points(GRID, 1), vg)
    assert np.abs(w.sum(1) - 1).max() < 1e-9


def test_three_sample_collinear_hand_solved():
    vg = VariogramModel("exponential", 0.0, 1.0, 10.0)
    coords = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
    target = np.array([[3.0, 0.0, 0.0]])
    g = lambda h: 1 - np.exp(-3 * h / 10)  # noqa: E731
    A = np.array(
        [
            [0, g(2), g(5), 1],
            [g(2), 0, g(3), 1],
            [g(5), g(3), 0, 1],
            [1, 1, 1, 0],
        ]
    )
    b = np.array([g(3), g(1), g(2), 1])
    # Cramer's rule as the independent method
    d = det(A)
    expected = []
    for i in range(3):
        Ai = A.copy()
        Ai[:, i] = b
        expected.append(det(Ai) / d)
    assert np.allclose(kriging_weights(coords, target, vg)[0], expected, atol=1e-9)


def test_singular_system_ridge_retry():
    vg = VariogramModel("spherical", 0.0, 1.0, 5.0)
    coords = np.array([[0.0, 0, 0], [0.0, 0, 0], [3.0, 0, 0]])
    w = kriging_weights(coords, np.array([[1.0, 0, 0]]), vg)
    assert np.isfinite(w).all() and w.sum() == pytest.approx(1.0, abs=1e-6)


def test_variogram_model():
    vg = VariogramModel("spherical", 0.1, 1.0, 10.0)
    assert vg(0.0) == 0.0
    assert vg(10.0) == pytest.approx(1.0)
    assert vg(50.0) == pytest.approx(1.0)
    assert VariogramModel("exponential", 0, 1, 10)(1e9) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        VariogramModel("gaussian")
    with pytest.raises(ValueError):
        VariogramModel(nugget=1.0, sill=0.5)


def test_empirical_variogram_brute_force():
    s = random_samples(12, 8)
    c, v = s.coords(), s.rss
    lag, gamma, counts = empirical_variogram(c, v, 4)
    dmax = max(np.linalg.norm(a - b) for a in c for b in c)
    edges = np.linspace(0, dmax * (1 + 1e-9), 5)
    bins = [[] for _ in range(4)]
    for i in range(12):
        for j in range(i + 1, 12):
            d = np.linalg.norm(c[i] - c[j])
            k = min(np.searchsorted(edges, d, side="right") - 1, 3)
            bins[k].append((d, 0.5 * (v[i] - v[j]) ** 2))
    ref = [(np.mean([p[0] for p in b]), np.mean([p[1] for p in b]), len(b)) for b in bins if b]
    assert np.allclose(lag, [r[0] for r in ref]) and np.allclose(gamma, [r[1] for r in ref])
    assert counts.tolist() == [r[2] for r in ref]


def test_outputs_finite_and_clamped():
    s = random_samples(16, 11)
    for est in (rbf3d_estimate(s, 0), kriging3d_estimate(s, 2), kriging3d_estimate(s, 1, kind="spherical")):
        assert np.isfinite(est).all() and est.min() >= 0 and est.max() <= 1
