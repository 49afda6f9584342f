import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casseg.errors import ParameterError, ShapeError
from casseg.oracles import best_two_partition
from casseg.postproc import absorb_small_regions, connected_regions, kmeans, kmeans_descriptors


def test_k1_is_global_mean():
    rng = np.random.default_rng(0)
    x = rng.random((30, 3))
    res = kmeans(x, 1)
    assert np.all(res.labels == 0)
    assert np.allclose(res.centers[0], x.mean(0), atol=1e-12)


def test_two_separated_values():
    field = np.zeros((4, 4, 2))
    field[:, 2:] = [5.0, -3.0]
    labels = kmeans_descriptors(field, k=2)
    assert set(np.unique(labels[:, :2])) != set(np.unique(labels[:, 2:]))
    assert np.unique(labels).size == 2


def test_one_dimensional_centres_match_exhaustive_search():
    values = [0.0, 0.0, 10.0, 10.0]
    sse, bits = best_two_partition(values)
    assert sse == 0.0 and bits[0] == bits[1] != bits[2] == bits[3]
    res = kmeans(np.array(values)[:, None], 2, seed=1)
    assert sorted(res.centers.ravel().tolist()) == [0.0, 10.0]


def test_k_too_large():
    with pytest.raises(ParameterError):
        kmeans(np.zeros((3, 1)), 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_inertia_non_increasing(seed, k):
    x = np.random.default_rng(seed).normal(size=(40, 2))
    hist = kmeans(x, k, seed=seed).inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_kmeans_deterministic():
    x = np.random.default_rng(3).random((50, 2))
    a = kmeans(x, 5, seed=7)
    b = kmeans(x, 5, seed=7)
    assert np.array_equal(a.labels, b.labels)


def test_kmeans_labels_compact():
    # three distinct points but k=5: only three clusters can be used
    x = np.repeat(np.array([[0.0], [1.0], [2.0]]), 4, axis=0)
    res = kmeans(x, 5)
    assert set(np.unique(res.labels)) == set(range(res.centers.shape[0]))


def test_connected_regions_splits_disjoint_label():
    lab = np.array([[0, 1, 0]])
    comp, n = connected_regions(lab)
    assert n == 3


def test_absorb_nothing_to_do():
    lab = np.zeros((10, 10), int)
    lab[:, 5:] = 1
    field = np.random.default_rng(0).random((10, 10, 2))
    out = absorb_small_regions(lab, field, 0.02)
    assert out.tobytes() == lab.tobytes()


def test_absorb_single_pixel():
    lab = np.zeros((10, 10), int)
    lab[4, 4] = 1
    out = absorb_small_regions(lab, np.zeros((10, 10, 1)), 0.02)
    assert np.unique(out).tolist() == [0]


def test_absorb_picks_nearest_mean_neighbour():
    lab = np.zeros((10, 10), int)
    lab[:, 5:] = 2
    lab[0, 4:6] = 1  # two pixels touching both halves
    field = np.zeros((10, 10, 1))
    field[lab == 2] = 1.0
    field[lab == 1] = 0.9
    means = {k: field[lab == k].mean() for k in (0, 2)}
    nearest = min(means, key=lambda k: (means[k] - 0.9) ** 2)
    out = absorb_small_regions(lab, field, 0.05)
    assert out[0, 4] == out[0, 9] if nearest == 2 else out[0, 4] == out[0, 0]
    assert out[0, 4] == out[5, 9]


def test_absorb_shape_mismatch():
    with pytest.raises(ShapeError):
        absorb_small_regions(np.zeros((3, 3), int), np.zeros((3, 4, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.2))
def test_absorb_postcondition(seed, frac):
    rng = np.random.default_rng(seed)
    lab = rng.integers(0, 4, (12, 12))
    field = rng.random((12, 12, 2))
    out = absorb_small_regions(lab, field, frac)
    comp, n = connected_regions(out)
    sizes = np.bincount(comp.ravel())
    assert n == 1 or sizes.min() >= frac * out.size
