import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xmodal.errors import ShapeMismatch
from xmodal.gradcheck import check_m3l_gradients, check_patr_gradients
from xmodal.losses import (
    M3LHyperparams,
    PATRHyperparams,
    TripletBatch,
    m3l_loss,
    patr_loss,
    square_distance,
)


def single_row_batch(an=(0.0, 0.0), im_p=(1.0, 0.0), im_n=(2.0, 0.0), te_n=(0.0, 3.0)):
    return TripletBatch(
        anchor_text=np.array([an], dtype=np.float64),
        pos_image=np.array([im_p], dtype=np.float64),
        neg_image=np.array([im_n], dtype=np.float64),
        neg_text=np.array([te_n], dtype=np.float64),
    )


def random_batch(rng, n=4, d=6):
    return TripletBatch(
        anchor_text=rng.standard_normal((n, d)),
        pos_image=rng.standard_normal((n, d)),
        neg_image=rng.standard_normal((n, d)),
        neg_text=rng.standard_normal((n, d)),
    )


class TestSquareDistance:
    def test_unit_apart(self):
        assert square_distance(np.array([0.0, 0.0]), np.array([1.0, 0.0])) == 1.0

    def test_identity(self):
        x = np.array([2.5, -1.0, 3.0])
        assert square_distance(x, x) == 0.0

    def test_hand_values(self):
        assert square_distance(np.array([0.0, 0.0]), np.array([2.0, 0.0])) == 4.0
        assert square_distance(np.array([0.0, 0.0]), np.array([0.0, 3.0])) == 9.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            square_distance(np.array([1.0]), np.array([1.0, 2.0]))


class TestM3L:
    def test_hand_value_rho_1(self):
        """0.5 * (1/4) + 1 * (1/9) = 17/72."""
        out = m3l_loss(single_row_batch(), M3LHyperparams(rho=1, alpha1=0.5, alpha2=1))
        assert abs(out.loss - (0.5 / 4 + 1 / 9)) <= 1e-9

    def test_hand_value_rho_4(self):
        """0.5 / 256 + 1 / 6561."""
        out = m3l_loss(single_row_batch(), M3LHyperparams(rho=4, alpha1=0.5, alpha2=1))
        assert abs(out.loss - (0.5 / 256 + 1 / 6561)) <= 1e-9

    def test_zero_numerator(self):
        """anchor == positive image (negatives distinct) gives loss 0."""
        out = m3l_loss(
            single_row_batch(an=(1.0, 0.0), im_p=(1.0, 0.0)), M3LHyperparams()
        )
        assert out.loss == 0.0

    def test_loss_non_negative(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            out = m3l_loss(random_batch(rng), M3LHyperparams())
            assert out.loss >= 0.0

    @pytest.mark.parametrize("s", [0.5, 2.0, 10.0])
    def test_scale_invariance(self, s):
        """Equal powers of squared distances cancel under global scaling."""
        rng = np.random.default_rng(1)
        for _ in range(10):
            b = random_batch(rng)
            scaled = TripletBatch(
                anchor_text=s * b.anchor_text,
                pos_image=s * b.pos_image,
                neg_image=s * b.neg_image,
                neg_text=s * b.neg_text,
            )
            base = m3l_loss(b, M3LHyperparams()).loss
            assert abs(m3l_loss(scaled, M3LHyperparams()).loss - base) <= 1e-6 * base

    def test_monotone_in_negative_image_distance(self):
        """Moving im_n strictly closer to the anchor raises the loss."""
        hp = M3LHyperparams()
        far = m3l_loss(single_row_batch(im_n=(3.0, 0.0)), hp).loss
        near = m3l_loss(single_row_batch(im_n=(1.5, 0.0)), hp).loss
        assert near > far

    def test_monotone_in_negative_text_distance(self):
        hp = M3LHyperparams()
        far = m3l_loss(single_row_batch(te_n=(0.0, 4.0)), hp).loss
        near = m3l_loss(single_row_batch(te_n=(0.0, 1.5)), hp).loss
        assert near > far

    def test_alpha2_zero_kills_neg_text_gradient(self):
        rng = np.random.default_rng(2)
        out = m3l_loss(random_batch(rng), M3LHyperparams(alpha2=0.0))
        assert (out.grad_neg_text == 0).all()

    def test_images_receive_no_gradient_field(self):
        """The loss only reports text-side gradients; the image side is frozen."""
        out = m3l_loss(single_row_batch(), M3LHyperparams())
        assert out.grad_anchor.shape == (1, 2)
        assert out.grad_neg_text.shape == (1, 2)

    def test_degenerate_denominator_counted(self):
        b = single_row_batch(im_n=(0.0, 0.0), te_n=(0.0, 0.0), an=(0.0, 0.0))
        out = m3l_loss(b, M3LHyperparams())
        assert out.degenerate_denominators == 2
        assert np.isfinite(out.loss)
        assert np.isfinite(out.grad_anchor).all()

    def test_gradients_match_finite_differences(self):
        for i in range(10):
            for result in check_m3l_gradients(3100 + i):
                assert result.passed, f"{result.name}: {result.rel_error:.3e}"

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            TripletBatch(
                anchor_text=np.zeros((2, 3)),
                pos_image=np.zeros((2, 3)),
                neg_image=np.zeros((2, 4)),
                neg_text=np.zeros((2, 3)),
            )

    def test_invalid_hyperparams(self):
        with pytest.raises(ValueError):
            M3LHyperparams(rho=0)
        with pytest.raises(ValueError):
            M3LHyperparams(alpha1=0, alpha2=0)
        with pytest.raises(ValueError):
            M3LHyperparams(alpha1=-1)


class TestPATR:
    def test_hand_value_large_eta(self):
        """1 + (1100 - 4) = 1097."""
        out = patr_loss(single_row_batch(), PATRHyperparams(eta=1100))
        assert abs(out.loss - 1097.0) <= 1e-9

    def test_hand_value_small_eta(self):
        """1 + max(0, 1 - 4) = 1."""
        out = patr_loss(single_row_batch(), PATRHyperparams(eta=1))
        assert abs(out.loss - 1.0) <= 1e-9

    def test_zero_loss_case(self):
        """anchor == positive and the negative is beyond the margin."""
        out = patr_loss(
            single_row_batch(an=(1.0, 0.0), im_p=(1.0, 0.0), im_n=(5.0, 0.0)),
            PATRHyperparams(eta=2.0),
        )
        assert out.loss == 0.0

    def test_eta_zero_equals_mean_positive_distance(self):
        rng = np.random.default_rng(3)
        b = random_batch(rng)
        out = patr_loss(b, PATRHyperparams(eta=0.0))
        expected = np.mean([(a - p) @ (a - p) for a, p in zip(b.anchor_text, b.pos_image)])
        assert abs(out.loss - expected) <= 1e-12

    def test_hinge_kink_uses_inactive_subgradient(self):
        """With eta - d(an, im_n) exactly 0, only the pull term remains."""
        b = single_row_batch(im_n=(2.0, 0.0))
        out = patr_loss(b, PATRHyperparams(eta=4.0))
        np.testing.assert_allclose(out.grad_anchor, 2.0 * (b.anchor_text - b.pos_image))

    def test_no_neg_text_gradient(self):
        out = patr_loss(single_row_batch(), PATRHyperparams())
        assert out.grad_neg_text is None

    def test_loss_non_negative(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            assert patr_loss(random_batch(rng), PATRHyperparams()).loss >= 0.0

    def test_gradients_match_finite_differences(self):
        for i in range(10):
            for result in check_patr_gradients(4100 + i):
                assert result.passed, f"{result.name}: {result.rel_error:.3e}"

    def test_negative_eta_rejected(self):
        with pytest.raises(ValueError):
            PATRHyperparams(eta=-1.0)


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**31),
    n=st.integers(min_value=1, max_value=6),
    d=st.integers(min_value=1, max_value=8),
)
def test_both_losses_always_finite_and_non_negative(seed, n, d):
    rng = np.random.default_rng(seed)
    b = random_batch(rng, n=n, d=d)
    for out in (m3l_loss(b, M3LHyperparams()), patr_loss(b, PATRHyperparams())):
        assert out.loss >= 0.0
        assert np.isfinite(out.loss)
        assert np.isfinite(out.grad_anchor).all()
