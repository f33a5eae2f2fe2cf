import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xmodal.errors import ShapeMismatch, VocabExhausted
from xmodal.projection import ProjectionConfig, init_params
from xmodal.store import EmbeddingTable
from xmodal.tagging import (
    TaggingWeights,
    TagVocab,
    assign_tags,
    build_vocab,
    score_targets,
)


def vocab_of(tags, rows):
    return TagVocab(tags=tuple(tags), embeddings=np.asarray(rows, dtype=np.float64))


class TestScoreTargets:
    def test_hand_computed_blend(self):
        """cos(img,A)=0.9, cos(img,B)=0.1, cos(S,A)=0.2, cos(S,B)=0.8 with
        weights (0.65, 0.35) gives scores 0.655 and 0.345."""
        A = np.array([1.0, 0.0, 0.0])
        B = np.array([0.0, 1.0, 0.0])
        img = np.array([0.9, 0.1, np.sqrt(1 - 0.81 - 0.01)])
        src = np.array([0.2, 0.8, np.sqrt(1 - 0.04 - 0.64)])
        scores = score_targets(img, src, vocab_of(["A", "B"], [A, B]), TaggingWeights())
        np.testing.assert_allclose(scores, [0.655, 0.345], atol=1e-9)

    def test_w1_zero_reduces_to_text_similarity(self):
        rng = np.random.default_rng(0)
        vocab = vocab_of([f"t{i}" for i in range(6)], rng.standard_normal((6, 4)))
        img = rng.standard_normal(4)
        src = rng.standard_normal(4)
        scores = score_targets(img, src, vocab, TaggingWeights(w1=0.0, w2=1.0))
        text_only = vocab.embeddings @ src / (
            np.linalg.norm(vocab.embeddings, axis=1) * np.linalg.norm(src)
        )
        np.testing.assert_allclose(np.argsort(scores), np.argsort(text_only))

    def test_identical_vocab_rows_score_equally(self):
        vocab = vocab_of(["x", "y", "z"], np.ones((3, 4)))
        scores = score_targets(np.ones(4), np.ones(4), vocab, TaggingWeights())
        assert np.allclose(scores, scores[0])

    def test_scores_bounded_by_weight_sum(self):
        rng = np.random.default_rng(1)
        vocab = vocab_of([f"t{i}" for i in range(10)], rng.standard_normal((10, 5)))
        w = TaggingWeights()
        scores = score_targets(rng.standard_normal(5), rng.standard_normal(5), vocab, w)
        assert (np.abs(scores) <= w.w1 + w.w2 + 1e-12).all()

    def test_shape_mismatch(self):
        vocab = vocab_of(["a"], [[1.0, 0.0]])
        with pytest.raises(ShapeMismatch):
            score_targets(np.ones(3), np.ones(2), vocab)

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            TaggingWeights(w1=-0.1)
        with pytest.raises(ValueError):
            TaggingWeights(w1=0.0, w2=0.0)


class TestAssignTags:
    def test_single_source_gets_argmax(self):
        vocab = vocab_of(["far", "near"], [[-1.0, 0.0], [1.0, 0.0]])
        out = assign_tags(
            np.array([1.0, 0.0]), ["s"], np.array([[1.0, 0.0]]), vocab
        )
        assert len(out.pairs) == 1
        assert out.pairs[0].target_tag == "near"
        assert out.pairs[0].rank_considered == 1

    def test_contested_top_tag_goes_to_first_source(self):
        """Both sources prefer tag A; the second falls back to runner-up B."""
        A = np.array([1.0, 0.0])
        B = np.array([0.9, 0.1])
        C = np.array([-1.0, 0.0])
        vocab = vocab_of(["A", "B", "C"], [A, B, C])
        img = np.array([1.0, 0.0])
        sources = np.array([[1.0, 0.0], [1.0, 0.05]])
        out = assign_tags(img, ["s1", "s2"], sources, vocab)
        assert out.pairs[0].target_tag == "A"
        assert out.pairs[1].target_tag == "B"
        assert out.pairs[1].rank_considered == 2

    def test_full_vocab_is_perfect_matching(self):
        rng = np.random.default_rng(2)
        m = 8
        vocab = vocab_of([f"t{i}" for i in range(m)], rng.standard_normal((m, 5)))
        out = assign_tags(
            rng.standard_normal(5),
            [f"s{i}" for i in range(m)],
            rng.standard_normal((m, 5)),
            vocab,
        )
        targets = [p.target_tag for p in out.pairs]
        assert sorted(targets) == sorted(vocab.tags)

    def test_vocab_exhausted(self):
        vocab = vocab_of(["only"], [[1.0, 0.0]])
        with pytest.raises(VocabExhausted):
            assign_tags(np.ones(2), ["a", "b"], np.ones((2, 2)), vocab)

    def test_assignment_invariant_under_image_scaling(self):
        rng = np.random.default_rng(3)
        vocab = vocab_of([f"t{i}" for i in range(6)], rng.standard_normal((6, 4)))
        img = rng.standard_normal(4)
        src = rng.standard_normal((2, 4))
        base = assign_tags(img, ["a", "b"], src, vocab)
        scaled = assign_tags(7.5 * img, ["a", "b"], src, vocab)
        assert [p.target_tag for p in base.pairs] == [p.target_tag for p in scaled.pairs]

    def test_context_flip(self):
        """Same source tag and vocab, two images on opposite sides of the
        blended decision boundary: different targets win."""
        season = np.array([1.0, 0.0, 0.0])
        coil = np.array([0.0, 1.0, 0.0])
        vocab = vocab_of(["printemps", "ressort"], [season, coil])
        # the source tag sits exactly between both translations
        source = np.array([np.sqrt(0.5), np.sqrt(0.5), 0.0])
        meadow_photo = np.array([0.95, 0.05, 0.0])
        machine_photo = np.array([0.05, 0.95, 0.0])
        w = TaggingWeights(w1=0.65, w2=0.35)
        spring_a = assign_tags(meadow_photo, ["spring"], source[None, :], vocab, w)
        spring_b = assign_tags(machine_photo, ["spring"], source[None, :], vocab, w)
        assert spring_a.pairs[0].target_tag == "printemps"
        assert spring_b.pairs[0].target_tag == "ressort"

    def test_tie_breaks_lexicographically(self):
        same = np.array([1.0, 0.0])
        vocab = vocab_of(["zebra", "aardvark"], [same, same])
        out = assign_tags(same, ["s"], same[None, :], vocab)
        assert out.pairs[0].target_tag == "aardvark"


class TestBuildVocab:
    def test_projects_through_head(self):
        cfg = ProjectionConfig(
            input_dim=4, layer_dims=(5, 3), dropout_rates=(0.0, 0.0),
            l2norm_flags=(True, False), seed=1,
        )
        params = init_params(cfg)
        raw = EmbeddingTable(
            ids=("chien", "chat"),
            vectors=np.random.default_rng(0).standard_normal((2, 4)).astype(np.float32),
            modality="text",
        )
        vocab = build_vocab(raw, params)
        assert vocab.tags == ("chien", "chat")
        assert vocab.embeddings.shape == (2, 3)
        assert (vocab.embeddings >= 0).all()  # final ReLU

    def test_duplicate_tags_rejected(self):
        with pytest.raises(ValueError):
            TagVocab(tags=("a", "a"), embeddings=np.ones((2, 2)))


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**31),
    n_vocab=st.integers(min_value=1, max_value=10),
    n_src=st.integers(min_value=1, max_value=10),
)
def test_assignment_dedupe_property(seed, n_vocab, n_src):
    """Assigned targets are pairwise distinct; length is the number of
    sources when the vocab is large enough, else VocabExhausted."""
    rng = np.random.default_rng(seed)
    vocab = vocab_of([f"t{i}" for i in range(n_vocab)], rng.standard_normal((n_vocab, 4)))
    img = rng.standard_normal(4)
    srcs = rng.standard_normal((n_src, 4))
    names = [f"s{i}" for i in range(n_src)]
    if n_src > n_vocab:
        with pytest.raises(VocabExhausted):
            assign_tags(img, names, srcs, vocab)
        return
    out = assign_tags(img, names, srcs, vocab)
    targets = [p.target_tag for p in out.pairs]
    assert len(targets) == n_src
    assert len(set(targets)) == len(targets)
