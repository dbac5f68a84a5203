import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxpipe.errors import DimsMismatch, EmptySequence, NoPositiveImages
from voxpipe.metrics import (
    balancing_weights,
    bce,
    dice_per_case,
    score_masks,
    weighted_bce,
)


def brute_force_balancing(masks):
    """Independent voxel-counting oracle for the balance fractions."""
    pos = sum(int(v != 0) for m in masks for v in np.asarray(m).ravel())
    total = sum(np.asarray(m).size for m in masks)
    pos_img_vox = sum(np.asarray(m).size for m in masks if np.count_nonzero(m) > 0)
    if pos_img_vox == 0:
        return None
    wp = pos / pos_img_vox
    wm = (total - pos) / total
    return wp / (wp + wm), wm / (wp + wm)


class TestBce:
    def test_perfect_prediction(self):
        assert bce(1, 1.0) == pytest.approx(0.0, abs=1e-6)
        assert bce(0, 0.0) == pytest.approx(0.0, abs=1e-6)

    def test_half_confidence(self):
        assert bce(1, 0.5) == pytest.approx(math.log(2), abs=1e-12)

    def test_direct_evaluation(self):
        assert bce(0, 0.25) == pytest.approx(-math.log(0.75), abs=1e-12)

    def test_vectorized(self):
        out = bce(np.array([1, 0]), np.array([0.5, 0.25]))
        assert out == pytest.approx([math.log(2), -math.log(0.75)])

    def test_convex_in_prediction(self):
        # second difference nonnegative on a grid, for both truths
        p = np.linspace(0.01, 0.99, 199)
        for y in (0, 1):
            vals = bce(np.full_like(p, y), p)
            second = vals[2:] - 2 * vals[1:-1] + vals[:-2]
            assert np.all(second >= -1e-12)


class TestWeightedBce:
    def test_hand_computed_with_balance_weights(self):
        # w = 2/9 from the two-mask balancing example below
        assert weighted_bce(1, 0.5, 2.0 / 9.0) == pytest.approx((7.0 / 9.0) * math.log(2), abs=1e-12)

    def test_silenced_terms(self):
        for p in (0.1, 0.5, 0.9):
            assert weighted_bce(0, p, 0.0) == 0.0
            assert weighted_bce(1, p, 1.0) == 0.0

    @given(
        y=st.integers(0, 1),
        p=st.floats(0.0, 1.0, allow_nan=False),
    )
    def test_half_weight_is_half_bce(self, y, p):
        assert weighted_bce(y, p, 0.5) == pytest.approx(0.5 * bce(y, p), abs=1e-12)

    def test_weight_range_checked(self):
        with pytest.raises(ValueError):
            weighted_bce(1, 0.5, 1.5)


class TestBalancingWeights:
    def test_two_mask_example(self):
        mask_a = np.array([[1, 0], [0, 0]])
        mask_b = np.zeros((2, 2), dtype=int)
        w = balancing_weights([mask_a, mask_b])
        assert w.w_plus == pytest.approx(2.0 / 9.0, abs=1e-12)
        assert w.w_minus == pytest.approx(7.0 / 9.0, abs=1e-12)

    def test_all_positive(self):
        w = balancing_weights([np.ones((2, 2))])
        assert w.w_plus == 1.0
        assert w.w_minus == 0.0

    def test_all_negative_raises(self):
        with pytest.raises(NoPositiveImages):
            balancing_weights([np.zeros((2, 2)), np.zeros((2, 2))])

    def test_dims_must_agree(self):
        with pytest.raises(DimsMismatch):
            balancing_weights([np.ones((2, 2)), np.ones((3, 3))])

    @settings(max_examples=200, deadline=None)
    @given(
        seed=st.integers(0, 2**31 - 1),
        n_masks=st.integers(1, 10),
        density=st.floats(0.0, 1.0),
    )
    def test_matches_brute_force_oracle(self, seed, n_masks, density):
        rng = np.random.default_rng(seed)
        masks = [(rng.random((8, 8)) < density).astype(int) for _ in range(n_masks)]
        expected = brute_force_balancing(masks)
        if expected is None:
            with pytest.raises(NoPositiveImages):
                balancing_weights(masks)
            return
        w = balancing_weights(masks)
        assert w.w_plus == pytest.approx(expected[0], abs=0)  # same arithmetic, exact
        assert w.w_minus == pytest.approx(expected[1], abs=0)
        assert abs(w.w_plus + w.w_minus - 1.0) < 1e-12


class TestScoreMasks:
    def test_identity(self):
        m = np.array([[1, 0], [1, 1]])
        s = score_masks(m, m)
        assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)

    def test_disjoint(self):
        s = score_masks(np.array([[1, 0]]), np.array([[0, 1]]))
        assert s.f1 == 0.0

    def test_hand_count(self):
        pred = np.array([[1, 1, 0]])  # {a, b}
        truth = np.array([[0, 1, 1]])  # {b, c}
        s = score_masks(pred, truth)
        assert (s.tp, s.fp, s.fn) == (1, 1, 1)
        assert (s.precision, s.recall, s.f1) == (0.5, 0.5, 0.5)

    def test_empty_conventions(self):
        empty = np.zeros((2, 2))
        ones = np.ones((2, 2))
        assert score_masks(empty, empty).f1 == 1.0
        assert score_masks(empty, ones).f1 == 0.0
        assert score_masks(ones, empty).f1 == 0.0

    def test_dims_mismatch(self):
        with pytest.raises(DimsMismatch):
            score_masks(np.zeros((2, 2)), np.zeros((3, 2)))

    @given(seed=st.integers(0, 2**31 - 1))
    def test_swap_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        a = (rng.random((4, 4, 4)) < 0.4).astype(int)
        b = (rng.random((4, 4, 4)) < 0.4).astype(int)
        s_ab = score_masks(a, b)
        s_ba = score_masks(b, a)
        assert s_ab.precision == s_ba.recall
        assert s_ab.recall == s_ba.precision
        assert s_ab.f1 == s_ba.f1
        assert 0.0 <= s_ab.f1 <= 1.0

    @given(seed=st.integers(0, 2**31 - 1))
    def test_f1_is_one_iff_equal(self, seed):
        rng = np.random.default_rng(seed)
        a = (rng.random((3, 3, 3)) < 0.5).astype(int)
        b = (rng.random((3, 3, 3)) < 0.5).astype(int)
        s = score_masks(a, b)
        assert (s.f1 == 1.0) == np.array_equal(a != 0, b != 0)


class TestDicePerCase:
    def test_single(self):
        assert dice_per_case([1.0]) == 1.0

    def test_mean(self):
        assert dice_per_case([0.9, 0.95]) == pytest.approx(0.925, abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptySequence):
            dice_per_case([])

    def test_range_checked(self):
        with pytest.raises(ValueError):
            dice_per_case([1.2])
