import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anchored_ood import datasets
from anchored_ood.datasets import (
    Normalizer,
    corrupt,
    corruption_magnitude,
    gen_gaussian_blobs,
    gen_ood_ring,
    gen_two_moons,
    load_csv,
    rotate,
    save_csv,
    train_test_pair,
)


def test_two_moons_geometry():
    ds = gen_two_moons(1001, noise=0.0, seed=3)
    assert len(ds) == 1001 and ds.num_classes == 2
    assert np.bincount(ds.labels).tolist() == [501, 500]
    upper = ds.features[ds.labels == 0]
    lower = ds.features[ds.labels == 1]
    np.testing.assert_allclose(np.linalg.norm(upper, axis=1), 1.0)
    np.testing.assert_allclose(np.linalg.norm(lower - [1.0, 0.5], axis=1), 1.0)
    assert np.all(upper[:, 1] >= 0) and np.all(lower[:, 1] <= 0.5)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 300), st.integers(0, 2**32 - 1))
def test_generators_are_seed_deterministic(n, seed):
    a, b = gen_two_moons(n, 0.1, seed), gen_two_moons(n, 0.1, seed)
    assert a.features.tobytes() == b.features.tobytes()
    assert np.array_equal(a.labels, b.labels)
    blobs = gen_gaussian_blobs(n, [[0, 0], [3, 0], [1.5, 2.6]], 1.0, seed)
    assert blobs.features.tobytes() == gen_gaussian_blobs(n, [[0, 0], [3, 0], [1.5, 2.6]], 1.0, seed).features.tobytes()
    assert np.abs(np.bincount(blobs.labels, minlength=3) - n / 3).max() < 1


def test_blob_statistics():
    ds = gen_gaussian_blobs(6000, [[0, 0], [5, 5]], sigma=0.5, seed=1)
    for k, c in enumerate([[0, 0], [5, 5]]):
        pts = ds.features[ds.labels == k]
        np.testing.assert_allclose(pts.mean(0), c, atol=0.05)
        np.testing.assert_allclose(pts.std(0), 0.5, atol=0.05)


@pytest.mark.parametrize("dim", [2, 3])
def test_ring_is_a_uniform_shell(dim):
    ring = gen_ood_ring(20000, radius=4.0, width=2.0, seed=0, dim=dim, center=np.ones(dim))
    r = np.linalg.norm(ring.features - 1.0, axis=1)
    assert r.min() >= 3.0 - 1e-12 and r.max() <= 5.0 + 1e-12
    # uniform in volume: P(r <= 4) = (4^d - 3^d) / (5^d - 3^d)
    expected = (4.0**dim - 3.0**dim) / (5.0**dim - 3.0**dim)
    assert np.mean(r <= 4.0) == pytest.approx(expected, abs=0.015)
    assert ring.labels is None
    thin = gen_ood_ring(10, radius=2.0, seed=1)
    np.testing.assert_allclose(np.linalg.norm(thin.features, axis=1), 2.0)
    with pytest.raises(ValueError):
        gen_ood_ring(10, radius=1.0, width=3.0)


def test_rotation_preserves_distances_and_labels():
    ds = gen_two_moons(200, 0.1, 0)
    rot = rotate(ds, 0.7)
    c = ds.features.mean(0)
    np.testing.assert_allclose(np.linalg.norm(rot.features - c, axis=1), np.linalg.norm(ds.features - c, axis=1))
    assert np.array_equal(rot.labels, ds.labels)
    np.testing.assert_allclose(rotate(ds, 2 * np.pi).features, ds.features, atol=1e-12)
    assert rot.params["theta"] == 0.7


def test_corruption_schedule():
    assert corruption_magnitude("smoothing", 5) == pytest.approx(0.75)
    assert corruption_magnitude("gaussian_noise", 1) == pytest.approx(0.3)
    for bad in (0, 6, 2.5):
        with pytest.raises(ValueError):
            corruption_magnitude("smoothing", bad)
    with pytest.raises(ValueError):
        corruption_magnitude("blur", 1)


@pytest.mark.parametrize("kind", datasets.CORRUPTIONS)
def test_corruption_distance_grows_with_level(kind):
    ds = gen_two_moons(500, 0.1, 0)
    dist = [np.linalg.norm(corrupt(ds, kind, lv, seed=4).features - ds.features) for lv in range(1, 6)]
    assert all(b > a for a, b in zip(dist, dist[1:]))
    out = corrupt(ds, kind, 3, seed=4)
    assert out.generator_id == f"two_moons+{kind}" and out.params["level"] == 3
    assert np.array_equal(out.features, corrupt(ds, kind, 3, seed=4).features)


def test_smoothing_contracts_toward_mean():
    ds = gen_two_moons(300, 0.1, 0)
    out = corrupt(ds, "smoothing", 4)
    spread = np.linalg.norm(out.features - ds.features.mean(0), axis=1)
    np.testing.assert_allclose(spread, 0.4 * np.linalg.norm(ds.features - ds.features.mean(0), axis=1))


def test_normalizer():
    x = np.random.default_rng(0).normal(3.0, 2.0, (500, 2))
    x[:, 1] = 7.0
    norm = Normalizer.fit(x)
    z = norm(x)
    np.testing.assert_allclose(z[:, 0].mean(), 0.0, atol=1e-12)
    np.testing.assert_allclose(z[:, 0].std(), 1.0)
    assert np.all(z[:, 1] == 0.0)


def test_csv_round_trip(tmp_path):
    ds = gen_gaussian_blobs(25, [[0, 0, 0], [1, 1, 1]], 0.3, seed=9)
    path = tmp_path / "blobs.csv"
    save_csv(path, ds)
    assert path.read_text().splitlines()[0] == "# d=3,N=2,n=25,generator_id=gaussian_blobs,seed=9"
    back = load_csv(path)
    assert back.features.tobytes() == ds.features.tobytes()
    assert np.array_equal(back.labels, ds.labels)
    ring = gen_ood_ring(5, 2.0, seed=1)
    save_csv(path, ring)
    assert load_csv(path).labels is None


def test_train_test_pair_are_independent():
    train, test = train_test_pair(gen_two_moons, 50, 20, seed=0, noise=0.1)
    assert len(train) == 50 and len(test) == 20
    assert not np.array_equal(train.features[:20], test.features)


def test_label_validation():
    with pytest.raises(ValueError):
        datasets.SyntheticDataset(np.zeros((2, 2)), [0, 3], "x", 0, num_classes=2)
    with pytest.raises(ValueError):
        gen_two_moons(1)


def test_zero_sigma_blobs_sit_on_centers():
    centers = np.array([[0.0, 1.0], [-2.0, 3.0], [4.0, 4.0]])
    ds = gen_gaussian_blobs(30, centers, sigma=0.0, seed=1)
    np.testing.assert_array_equal(ds.features, centers[ds.labels])


@pytest.mark.parametrize("seed", range(5))
def test_blob_means_within_clt_bound(seed):
    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0]])
    sigma, n = 1.3, 4000
    ds = gen_gaussian_blobs(n, centers, sigma=sigma, seed=seed)
    for k, c in enumerate(centers):
        mean = ds.features[ds.labels == k].mean(axis=0)
        assert np.all(np.abs(mean - c) < 3 * sigma / np.sqrt(n / len(centers)))


def test_large_ring_lies_outside_id_hull():
    from scipy.spatial import Delaunay

    moons = gen_two_moons(1000, 0.1, seed=0).features
    hull = Delaunay(moons)
    radius = 1.5 * np.linalg.norm(moons - moons.mean(0), axis=1).max()
    ring = gen_ood_ring(500, radius, seed=1, center=moons.mean(0)).features
    assert np.all(hull.find_simplex(ring) < 0)
