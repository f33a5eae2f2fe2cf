import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xmodal.errors import BatchTooSmall, ShapeMismatch
from xmodal.losses import square_distance
from xmodal.mining import mine_hard_negatives


def brute_force(texts, images):
    """Independent O(n^2) oracle built on the scalar distance."""
    n = texts.shape[0]
    out = []
    for i in range(n):
        best_j, best_d = None, None
        for j in range(n):
            if j == i:
                continue
            d = square_distance(texts[i], images[j])
            if best_d is None or d < best_d:
                best_j, best_d = j, d
        out.append(best_j)
    return np.array(out)


def test_two_rows_forced_choice():
    rng = np.random.default_rng(0)
    texts = rng.standard_normal((2, 4))
    images = rng.standard_normal((2, 4))
    np.testing.assert_array_equal(mine_hard_negatives(texts, images), [1, 0])


def test_nearest_other_image_wins():
    """Row 0 anchor at origin: image at distance 0.01 beats one at 50."""
    texts = np.array([[0.0, 0.0], [5.0, 0.0], [9.0, 9.0]])
    images = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0]])
    neg = mine_hard_negatives(texts, images)
    assert neg[0] == 1


def test_tie_breaks_to_smaller_index():
    texts = np.array([[0.0, 0.0], [10.0, 0.0], [20.0, 0.0]])
    images = np.array([[5.0, 5.0], [1.0, 0.0], [-1.0, 0.0]])  # rows 1,2 tie for row 0
    assert mine_hard_negatives(texts, images)[0] == 1


def test_duplicate_of_positive_is_eligible():
    """Exclusion is by index: an exact copy of the positive at another
    index can still be mined."""
    texts = np.array([[1.0, 0.0], [9.0, 9.0], [8.0, 8.0]])
    images = np.array([[1.0, 0.0], [1.0, 0.0], [7.0, 7.0]])  # row 1 duplicates row 0
    neg = mine_hard_negatives(texts, images)
    assert neg[0] == 1  # the duplicate, not the positive itself


def test_never_selects_self():
    rng = np.random.default_rng(1)
    for n in (2, 3, 17):
        texts = rng.standard_normal((n, 8))
        images = rng.standard_normal((n, 8))
        neg = mine_hard_negatives(texts, images)
        assert (neg != np.arange(n)).all()
        assert ((0 <= neg) & (neg < n)).all()


def test_batch_too_small():
    with pytest.raises(BatchTooSmall):
        mine_hard_negatives(np.zeros((1, 4)), np.zeros((1, 4)))


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        mine_hard_negatives(np.zeros((3, 4)), np.zeros((3, 5)))


@pytest.mark.parametrize("n", [2, 3, 17, 128])
def test_matches_brute_force(n):
    rng = np.random.default_rng(n)
    for _ in range(5):
        texts = rng.standard_normal((n, 16))
        images = rng.standard_normal((n, 16))
        np.testing.assert_array_equal(
            mine_hard_negatives(texts, images), brute_force(texts, images)
        )


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**31),
    n=st.integers(min_value=2, max_value=12),
    d=st.integers(min_value=1, max_value=6),
)
def test_invariant_under_coordinate_permutation(seed, n, d):
    """Permuting feature coordinates consistently leaves choices fixed."""
    rng = np.random.default_rng(seed)
    texts = rng.standard_normal((n, d))
    images = rng.standard_normal((n, d))
    perm = rng.permutation(d)
    np.testing.assert_array_equal(
        mine_hard_negatives(texts, images),
        mine_hard_negatives(texts[:, perm], images[:, perm]),
    )
