import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casseg.errors import LabelError, ParameterError, ShapeError
from casseg.losses import (
    cace_loss,
    cas_backward,
    cas_bounds,
    cas_forward,
    ce_loss,
    region_means,
)
from casseg.oracles import cas_loop, central_differences
from casseg.partition import RegionPartition


def four_pixel(mixed: bool):
    # 2x2 image; top row is region 0, bottom row region 1
    r1 = [[1.0, 0.0], [0.5, 0.5]] if mixed else [[1.0, 0.0], [1.0, 0.0]]
    field = np.array([r1, [[0.0, 1.0], [0.0, 1.0]]])
    labels = np.array([[0, 0], [1, 1]])
    return field, labels


def random_case(rng, h=None, w=None, m=None, n=None):
    h = h or int(rng.integers(1, 7))
    w = w or int(rng.integers(1, 7))
    m = m or int(rng.integers(1, 5))
    n = min(n or int(rng.integers(1, 5)), h * w)
    labels = rng.permutation(np.arange(h * w) % n).reshape(h, w)
    field = rng.dirichlet(np.ones(m), size=(h, w))
    return field, labels


# -- region means -------------------------------------------------------------


def test_region_means_constant_field():
    field = np.full((3, 3, 2), 0.25)
    labels = np.arange(9).reshape(3, 3) % 3
    assert np.array_equal(region_means(field, labels), np.full((3, 2), 0.25))


def test_region_means_singleton_region():
    field = np.array([[[0.1, 0.9], [0.6, 0.4], [0.3, 0.7]]])
    means = region_means(field, RegionPartition(np.array([[0, 1, 1]]), 2))
    assert np.array_equal(means[0], [0.1, 0.9])


def test_region_means_mixed_instance():
    field, labels = four_pixel(mixed=True)
    sums = {}
    for (i, j), lab in np.ndenumerate(labels):
        sums.setdefault(lab, []).append(field[i, j])
    oracle = [sum(v) / len(v) for _, v in sorted(sums.items())]
    means = region_means(field, labels)
    assert np.allclose(means, oracle, atol=1e-12)
    assert np.allclose(means[0], [0.75, 0.25], atol=1e-12)


def test_region_means_shape_mismatch():
    with pytest.raises(ShapeError):
        region_means(np.zeros((2, 2, 2)), np.zeros((2, 3), int))


# -- forward ------------------------------------------------------------------


@pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
def test_single_constant_region_is_zero(alpha):
    out = cas_forward(np.full((3, 4, 2), 0.5), np.zeros((3, 4), int), alpha)
    assert out.total == 0.0


def test_perfect_sparse_case():
    field, labels = four_pixel(mixed=False)
    assert cas_loop(field, labels, 0.5) == -2.0
    out = cas_forward(field, labels, 0.5)
    assert out.total == -2.0
    assert np.array_equal(out.uniformer_per_region, [0.0, 0.0])
    assert out.discriminator_total == 4.0


def test_mixed_case():
    field, labels = four_pixel(mixed=True)
    assert cas_loop(field, labels, 0.5) == pytest.approx(-1.0625, abs=1e-12)
    out = cas_forward(field, labels, 0.5)
    assert out.total == pytest.approx(-1.0625, abs=1e-12)
    assert out.uniformer_per_region[0] == pytest.approx(0.125, abs=1e-12)
    assert out.discriminator_total == pytest.approx(2.25, abs=1e-12)


def test_forward_matches_loop_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        field, labels = random_case(rng)
        alpha = float(rng.random())
        assert cas_forward(field, labels, alpha).total == pytest.approx(
            cas_loop(field, labels, alpha), abs=1e-12
        )


def test_breakdown_recombines():
    rng = np.random.default_rng(3)
    for _ in range(20):
        field, labels = random_case(rng)
        alpha = float(rng.random())
        out = cas_forward(field, labels, alpha)
        recombined = alpha * out.uniformer_per_region.sum() - (1 - alpha) * out.discriminator_total
        assert abs(out.total - recombined) <= 1e-12


def test_alpha_out_of_range():
    with pytest.raises(ParameterError):
        cas_forward(np.zeros((1, 1, 2)), np.zeros((1, 1), int), 1.5)


# -- backward -----------------------------------------------------------------


def test_backward_constant_single_region():
    grad = cas_backward(np.full((2, 3, 2), 0.3), np.zeros((2, 3), int), 0.5)
    assert not np.any(grad)


@pytest.mark.parametrize(
    "mixed, expected",
    [(False, [-1.0, 1.0]), (True, [-0.625, 0.625])],
)
def test_backward_hand_examples(mixed, expected):
    field, labels = four_pixel(mixed)
    grad = cas_backward(field, labels, 0.5)
    numeric = central_differences(lambda f: cas_forward(f, labels, 0.5).total, field, h=1e-6)
    assert np.allclose(numeric[0, 0], expected, atol=1e-8)
    assert np.allclose(grad[0, 0], expected, atol=1e-12)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(40):
        field, labels = random_case(rng)
        alpha = float(rng.random())
        analytic = cas_backward(field, labels, alpha)
        numeric = central_differences(lambda f: cas_forward(f, labels, alpha).total, field, 1e-6)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
        rel = np.abs(analytic - numeric) / denom
        # entries whose true value is ~0 are judged on absolute error
        rel = np.where(np.abs(analytic) < 1e-6, np.abs(analytic - numeric), rel)
        worst = max(worst, float(rel.max()))
    assert worst <= 1e-6


# -- properties ---------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_label_permutation_invariance(seed, alpha):
    rng = np.random.default_rng(seed)
    field, labels = random_case(rng)
    n = labels.max() + 1
    perm = rng.permutation(n)
    a = cas_forward(field, labels, alpha)
    b = cas_forward(field, perm[labels], alpha)
    assert a.total == b.total
    assert np.array_equal(cas_backward(field, labels, alpha), cas_backward(field, perm[labels], alpha))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_duplicating_a_region_changes_nothing(seed, k):
    rng = np.random.default_rng(seed)
    field, labels = random_case(rng, n=3)
    flat_f = field.reshape(-1, field.shape[-1])
    flat_l = labels.ravel()
    target = int(flat_l[0])
    extra = np.repeat(flat_f[flat_l == target], k - 1, axis=0)
    big_f = np.concatenate([flat_f, extra])
    big_l = np.concatenate([flat_l, np.full(len(extra), target)])
    before = cas_forward(flat_f, flat_l, 0.5)
    after = cas_forward(big_f, big_l, 0.5)
    assert abs(before.uniformer_per_region[target] - after.uniformer_per_region[target]) <= 1e-12
    assert np.allclose(region_means(flat_f, flat_l)[target], region_means(big_f, big_l)[target], atol=1e-12, rtol=0)


def test_zero_variance_detection():
    rng = np.random.default_rng(5)
    field = rng.dirichlet([1, 1, 1], size=(4, 4))
    labels = np.repeat(np.arange(4), 4).reshape(4, 4)
    field[labels == 2] = field[labels == 2][0]
    u = cas_forward(field, labels, 0.5).uniformer_per_region
    assert u[2] == 0.0
    assert np.all(u[[0, 1, 3]] > 0)


# -- bounds -------------------------------------------------------------------


def test_bounds_examples():
    assert cas_bounds(2, 0.5) == (-2.0, 2.0)
    assert cas_bounds(1, 0.3) == (0.0, 0.6)
    assert cas_bounds(3, 0.5) == (-6.0, 3.0)


def test_perfect_segmentation_attains_lower_bound():
    field, labels = four_pixel(mixed=False)
    assert cas_forward(field, labels, 0.5).total == cas_bounds(2, 0.5)[0]


def test_random_simplex_fields_within_bounds():
    rng = np.random.default_rng(2024)
    for _ in range(500):
        field, labels = random_case(rng)
        alpha = float(rng.random())
        lo, hi = cas_bounds(labels.max() + 1, alpha)
        assert lo <= cas_forward(field, labels, alpha).total <= hi


# -- cross entropy ------------------------------------------------------------


def test_ce_correct_one_hot():
    p = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    loss, _ = ce_loss(p, np.array([[0, 1]]))
    assert 0 <= loss <= 1e-11


def test_ce_uniform_binary():
    loss, grad = ce_loss(np.full((2, 2, 2), 0.5), np.array([[0, 1], [1, 0]]))
    assert loss == pytest.approx(-math.log(0.5), abs=1e-15)
    assert grad[0, 0, 0] == pytest.approx(-1 / (4 * 0.5))
    assert grad[0, 0, 1] == 0.0


def test_ce_inverted_prediction_hits_clamp():
    p = np.array([[[0.0, 1.0]]])
    loss, _ = ce_loss(p, np.array([[0]]))
    assert loss == pytest.approx(-math.log(1e-12))


def test_ce_label_out_of_range():
    with pytest.raises(LabelError):
        ce_loss(np.full((1, 2, 2), 0.5), np.array([[0, 2]]))


def test_ce_gradient_finite_differences():
    rng = np.random.default_rng(0)
    p = rng.dirichlet([1, 1, 1], size=(3, 3))
    t = rng.integers(0, 3, (3, 3))
    _, grad = ce_loss(p, t)
    numeric = central_differences(lambda q: ce_loss(q, t)[0], p, 1e-7)
    assert np.allclose(grad, numeric, rtol=1e-5, atol=1e-8)


def test_cace_orientation():
    g = np.array([[0, 1], [1, 1]])
    exact = np.stack([1 - g, g], axis=-1).astype(float)
    res = cace_loss(exact, g)
    assert res.loss <= 1e-11 and res.orientation == "original"
    res = cace_loss(exact[..., ::-1], g)
    assert res.loss <= 1e-11 and res.orientation == "flipped"


def test_cace_tie_keeps_original():
    res = cace_loss(np.full((2, 2, 2), 0.5), np.array([[0, 1], [1, 1]]))
    assert res.loss == pytest.approx(math.log(2), abs=1e-15)
    assert res.orientation == "original"


def test_cace_rejects_non_binary():
    with pytest.raises(LabelError):
        cace_loss(np.full((1, 2, 2), 0.5), np.array([[0, 2]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cace_symmetry(seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet([1, 1], size=(4, 5))
    g = rng.integers(0, 2, (4, 5))
    assert cace_loss(p, g).loss == cace_loss(p, 1 - g).loss
