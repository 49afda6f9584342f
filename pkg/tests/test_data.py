import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casseg.data import (
    corrupt_low_fidelity,
    dataset_stats,
    gen_synthetic_segmentation,
    gen_toy_imbalance,
    pgm_decode,
    pgm_encode,
    pgm_read,
    pgm_read_labels,
    pgm_write,
    pgm_write_labels,
    preprocess,
    resize_nearest,
    split,
)
from casseg.errors import DataError, GenerationError, ParameterError, ParseError, ShapeError


# -- toy ----------------------------------------------------------------------


def test_toy_sizes_and_labels():
    train, test = gen_toy_imbalance(0)
    s = train[0]
    assert s.input.shape == (10010, 2)
    assert np.bincount(s.partition).tolist() == [10000, 10]
    assert not np.array_equal(train[0].input, test[0].input)


def test_toy_deterministic():
    a, _ = gen_toy_imbalance(3, n1=50, n2=5)
    b, _ = gen_toy_imbalance(3, n1=50, n2=5)
    assert a[0].input.tobytes() == b[0].input.tobytes()


def test_toy_sigma_is_standard_deviation():
    train, _ = gen_toy_imbalance(1, n1=20000, n2=1, sigma=0.2)
    pts = train[0].input[:20000]
    assert np.allclose(pts.mean(0), [1.0, 0.0], atol=0.01)
    assert np.allclose(pts.std(0), 0.2, atol=0.01)


def test_toy_rejects_empty_class():
    with pytest.raises(ParameterError):
        gen_toy_imbalance(0, n2=0)


# -- synthetic segmentation ----------------------------------------------------


def test_binary_sample_mask_is_region_one():
    ds = gen_synthetic_segmentation(0, 32, 32, 2, ((0.2, 0.05), (0.8, 0.05)))
    s = ds[0]
    assert np.array_equal(s.mask, s.partition)
    assert s.input[s.mask == 1].mean() > 0.7 and s.input[s.mask == 0].mean() < 0.3


def test_zero_std_gives_exactly_n_values():
    ds = gen_synthetic_segmentation(2, 20, 20, 4, [(0.1 * i, 0.0) for i in range(4)])
    assert np.unique(ds[0].input).size == 4
    assert np.unique(ds[0].partition).size == 4
    assert ds[0].mask is None


def test_segmentation_deterministic():
    kw = dict(height=16, width=16, region_count=3, textures=((0.1, 0.1), (0.5, 0.1), (0.9, 0.1)), n_samples=3)
    a = gen_synthetic_segmentation(9, **kw)
    b = gen_synthetic_segmentation(9, **kw)
    for x, y in zip(a.samples, b.samples):
        assert x.input.tobytes() == y.input.tobytes()
        assert x.partition.tobytes() == y.partition.tobytes()


def test_segmentation_errors():
    with pytest.raises(GenerationError):
        gen_synthetic_segmentation(0, 1, 2, 3, [(0, 0), (1, 0), (2, 0)])
    with pytest.raises(GenerationError):
        gen_synthetic_segmentation(0, 8, 8, 2, [(0.5, 0), (0.5, 0)])


# -- corruption ---------------------------------------------------------------


def _binary_ds(n, seed=0):
    return gen_synthetic_segmentation(seed, 8, 8, 2, ((0.2, 0.05), (0.8, 0.05)), n_samples=n)


def test_corrupt_p0_identity():
    ds = _binary_ds(5)
    out = corrupt_low_fidelity(ds, 0.0, seed=1)
    assert out.manifest["flipped_indices"] == []
    for a, b in zip(ds.samples, out.samples):
        assert a.mask.tobytes() == b.mask.tobytes()


def test_corrupt_p1_inverts_all():
    ds = _binary_ds(5)
    out = corrupt_low_fidelity(ds, 1.0, seed=1)
    assert out.manifest["flipped_indices"] == list(range(5))
    for a, b in zip(ds.samples, out.samples):
        assert np.array_equal(b.mask, 1 - a.mask)


def test_corrupt_half_count_and_manifest_replay():
    ds = _binary_ds(1000)
    out = corrupt_low_fidelity(ds, 0.5, seed=4)
    flipped = out.manifest["flipped_indices"]
    assert 400 <= len(flipped) <= 600
    replay = [i for i, (a, b) in enumerate(zip(ds.samples, out.samples)) if not np.array_equal(a.mask, b.mask)]
    assert replay == flipped


def test_multiregion_corruption_preserves_geometry():
    ds = gen_synthetic_segmentation(1, 12, 12, 3, ((0.1, 0.1), (0.5, 0.1), (0.9, 0.1)), n_samples=20)
    out = corrupt_low_fidelity(ds, 0.5, seed=2)
    for i, (a, b) in enumerate(zip(ds.samples, out.samples)):
        pairs = set(zip(a.partition.ravel().tolist(), b.partition.ravel().tolist()))
        assert len(pairs) == 3  # bijective relabeling
        changed = not np.array_equal(a.partition, b.partition)
        assert changed == (i in out.manifest["flipped_indices"])


def test_double_corruption_restores_binary():
    ds = _binary_ds(30)
    once = corrupt_low_fidelity(ds, 0.5, seed=8)
    twice = corrupt_low_fidelity(once, 0.5, seed=8)
    for a, b in zip(ds.samples, twice.samples):
        assert a.mask.tobytes() == b.mask.tobytes()


def test_corrupt_rejects_bad_probability():
    with pytest.raises(ParameterError):
        corrupt_low_fidelity(_binary_ds(1), 1.5)


# -- pre-processing -----------------------------------------------------------


def test_preprocess_constant_image():
    assert not np.any(preprocess(np.full((4, 4), 0.3), (4, 4)))


def test_preprocess_two_pixels():
    assert np.allclose(preprocess(np.array([[1.0, 3.0]]), (1, 2)), [[-1.0, 1.0]], atol=1e-15)


def test_resize_average_of_constants():
    from casseg.data import resize_bilinear

    assert resize_bilinear(np.ones((2, 2)), (1, 1))[0, 0] == 1.0


def test_preprocess_zero_target():
    with pytest.raises(ShapeError):
        preprocess(np.ones((2, 2)), (0, 3))


def test_preprocess_with_shared_stats():
    imgs = [np.array([[0.0, 1.0]]), np.array([[2.0, 3.0]])]
    stats = dataset_stats(imgs)
    assert stats == (1.5, pytest.approx(np.sqrt(1.25)))
    out = preprocess(imgs[0], (1, 2), stats)
    assert np.allclose(out, (imgs[0] - 1.5) / np.sqrt(1.25))


def test_resize_nearest_keeps_labels():
    lab = np.array([[0, 1], [2, 3]])
    out = resize_nearest(lab, (4, 4))
    assert set(np.unique(out)) == {0, 1, 2, 3}
    assert out[0, 0] == 0 and out[3, 3] == 3


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 9), st.integers(1, 9), st.integers(2, 12), st.integers(2, 12))
def test_preprocess_is_standardized(seed, h, w, th, tw):
    img = np.random.default_rng(seed).random((h, w))
    out = preprocess(img, (th, tw))
    assert abs(out.mean()) <= 1e-9
    if img.std() > 1e-6:
        assert abs(out.std() - 1) <= 1e-9 or out.std() == 0


# -- split --------------------------------------------------------------------


def test_split_sizes():
    ds = _binary_ds(10)
    tr, te = split(ds, (6, 4), seed=0)
    assert (len(tr), len(te)) == (6, 4)
    tr2, _ = split(ds, (6, 4), seed=0)
    assert tr.manifest["indices"] == tr2.manifest["indices"]
    assert sorted(tr.manifest["indices"] + te.manifest["indices"]) == list(range(10))


def test_split_all_train():
    tr, te = split(_binary_ds(4), (1, 0))
    assert (len(tr), len(te)) == (4, 0)


def test_split_empty():
    from casseg.data import Dataset

    with pytest.raises(DataError):
        split(Dataset([]))


# -- PGM ----------------------------------------------------------------------


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).random((7, 5))
    path = tmp_path / "a.pgm"
    pgm_write(path, img)
    back = pgm_read(path)
    assert np.array_equal(back, np.rint(img * 255) / 255)


def test_pgm_sixteen_bit_round_trip(tmp_path):
    img = np.random.default_rng(1).random((3, 4))
    path = tmp_path / "b.pgm"
    pgm_write(path, img, maxval=1000)
    assert np.array_equal(pgm_read(path), np.rint(img * 1000) / 1000)


def test_pgm_labels_round_trip(tmp_path):
    lab = np.array([[0, 2], [1, 300]])
    path = tmp_path / "l.pgm"
    pgm_write_labels(path, lab)
    assert np.array_equal(pgm_read_labels(path), lab)


def test_pgm_header_comment():
    levels, maxval = pgm_decode(b"P5 # made by hand\n2 1\n255\n\x00\xff")
    assert maxval == 255 and levels.tolist() == [[0, 255]]


def test_pgm_bad_magic():
    with pytest.raises(ParseError) as err:
        pgm_decode(b"P6\n1 1\n255\n\x00\x00\x00")
    assert err.value.offset == 0


def test_pgm_truncated():
    buf = pgm_encode(np.zeros((2, 2), int), 255)[:-1]
    with pytest.raises(ParseError) as err:
        pgm_decode(buf)
    assert err.value.offset == len(buf)


def test_pgm_zero_size():
    with pytest.raises(ParseError):
        pgm_decode(b"P5\n0 0\n255\n")


def test_manifest_json(tmp_path):
    ds = corrupt_low_fidelity(_binary_ds(4), 0.5, seed=3)
    path = tmp_path / "m.json"
    ds.save_manifest(path)
    loaded = json.loads(path.read_text())
    assert loaded["flipped_indices"] == ds.manifest["flipped_indices"]
    assert loaded["generator"] == "synthetic_segmentation"
