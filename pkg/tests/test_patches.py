import numpy as np
import pytest

from dnlfusion.patches import PatchDataset, SamplingError, reflect_index, sample_patches


def rasters(rng, h=20, w=30, bands=3, classes=3):
    hsi = rng.normal(size=(bands, h, w))
    lidar = rng.normal(size=(1, h, w))
    labels = rng.integers(0, classes + 1, size=(h, w))
    return hsi, lidar, labels


def test_reflect_index():
    assert reflect_index(np.array([-2, -1, 0, 4, 5, 6]), 5).tolist() == [2, 1, 0, 4, 3, 2]


def test_all_pixels_to_train():
    labels = np.zeros((20, 20), dtype=int)
    labels.flat[:198] = 1
    ds = sample_patches(np.zeros((2, 20, 20)), np.zeros((1, 20, 20)), labels, 5, [(198, 0)], seed=0)
    assert len(ds.split("train")) == 198 and len(ds.split("test")) == 0


def test_deterministic(rng):
    hsi, lidar, labels = rasters(rng)
    a = sample_patches(hsi, lidar, labels, 5, [(10, 20)] * 3, seed=4)
    b = sample_patches(hsi, lidar, labels, 5, [(10, 20)] * 3, seed=4)
    np.testing.assert_array_equal(a.coords, b.coords)
    np.testing.assert_array_equal(a.is_train, b.is_train)


def test_train_test_disjoint_and_labels_match(rng):
    hsi, lidar, labels = rasters(rng)
    for seed in range(100):
        ds = sample_patches(hsi, lidar, labels, 5, [(10, None)] * 3, seed=seed)
        train = {tuple(c) for c in ds.coords[ds.split("train")]}
        test = {tuple(c) for c in ds.coords[ds.split("test")]}
        assert not train & test
        assert len(train) + len(test) == np.count_nonzero(labels)
        np.testing.assert_array_equal(labels[ds.coords[:, 0], ds.coords[:, 1]], ds.labels)
        for c in (1, 2, 3):
            assert np.count_nonzero(ds.labels[ds.split("train")] == c) == 10


def test_infeasible_request_names_class(rng):
    hsi, lidar, labels = rasters(rng)
    available = np.count_nonzero(labels == 2)
    with pytest.raises(SamplingError, match=rf"class 2 \(road\).*only {available} labeled pixels"):
        sample_patches(hsi, lidar, labels, 5, [(1, 1), (available, 1), (1, 1)], 0, ["grass", "road", "roof"])


def test_label_beyond_counts(rng):
    hsi, lidar, labels = rasters(rng)
    with pytest.raises(SamplingError, match="labels go up to 3"):
        sample_patches(hsi, lidar, labels, 5, [(1, 1)] * 2, 0)


def test_patch_content_with_reflection(rng):
    hsi, lidar, labels = rasters(rng, h=9, w=9)
    ds = PatchDataset(hsi, lidar, np.array([[0, 0], [4, 4]]), np.array([1, 1]), np.array([True, False]), 3, 1)
    h, lid = ds.patches([0, 1])
    assert h.shape == (2, 3, 3, 3) and lid.shape == (2, 1, 3, 3)
    np.testing.assert_array_equal(h[1], hsi[:, 3:6, 3:6])
    rows = [1, 0, 1]
    np.testing.assert_array_equal(h[0], hsi[:, rows][:, :, rows])


def test_cached_and_uncached_agree(rng):
    hsi, lidar, labels = rasters(rng)
    ds = sample_patches(hsi, lidar, labels, 7, [(5, 5)] * 3, seed=1)
    uncached = ds.subset(np.arange(len(ds)))
    uncached.cache_limit_bytes = 0
    idx = [3, 0, 7]
    for a, b in zip(ds.patches(idx), uncached.patches(idx)):
        np.testing.assert_array_equal(a, b)
