"""Candidate pool, exact kNN, label view, and view fusion."""

from __future__ import annotations

import numpy as np
import pytest

from mvmil.datamodel import Bag, LabeledExemplar
from mvmil.labelview import (CandidatePool, FusionConfig, LabelViewVector,
                             build_pool, encode_bag_views, encode_label_view,
                             fuse, knn, load_pool, save_pool)
from mvmil.metric import MetricProjection, project
from mvmil.pca import fit as pca_fit
from mvmil.pca import project as pca_project
from oracles import knn_full_sort


def random_pool(seed=0, m=50, d=4, num_classes=3):
    rng = np.random.default_rng(seed)
    labels = np.zeros((m, num_classes), dtype=np.uint8)
    labels[np.arange(m), rng.integers(0, num_classes, size=m)] = 1
    return CandidatePool(features=rng.standard_normal((m, d)), labels=labels)


class TestPoolValidation:
    def test_one_hot_required(self):
        with pytest.raises(ValueError, match="one-hot"):
            CandidatePool(features=np.zeros((2, 3)),
                          labels=np.array([[1, 1, 0], [0, 1, 0]], dtype=np.uint8))

    def test_coverage_and_indices(self):
        labels = np.array([[0, 1, 0], [0, 1, 0], [1, 0, 0]], dtype=np.uint8)
        pool = CandidatePool(features=np.zeros((3, 2)), labels=labels)
        assert pool.class_coverage == frozenset({0, 1})
        assert pool.class_indices.tolist() == [1, 1, 0]


class TestKnn:
    def test_matches_full_sort_oracle(self):
        pool = random_pool(seed=1)
        rng = np.random.default_rng(2)
        for _ in range(10):
            q = rng.standard_normal(pool.dim)
            got = knn(pool, q, k=7)
            want = knn_full_sort(pool.features, q, 7)
            assert [i for i, _ in got] == [i for i, _ in want]
            for (_, dg), (_, dw) in zip(got, want):
                assert dg == pytest.approx(dw, abs=1e-12)

    def test_exact_ties_resolve_to_lower_index(self):
        # three exemplars bit-identical to the query plus one farther away
        feats = np.array([[1.0, 2.0], [5.0, 5.0], [1.0, 2.0], [1.0, 2.0]])
        labels = np.array([[1, 0], [0, 1], [0, 1], [1, 0]], dtype=np.uint8)
        pool = CandidatePool(features=feats, labels=labels)
        got = knn(pool, np.array([1.0, 2.0]), k=3)
        assert [i for i, _ in got] == [0, 2, 3]
        assert all(d == 0.0 for _, d in got)

    def test_query_in_pool_is_first_at_zero(self):
        pool = random_pool(seed=3)
        got = knn(pool, pool.features[17], k=1)
        assert got[0] == (17, 0.0)

    def test_k_bounds(self):
        pool = random_pool(seed=4, m=5)
        with pytest.raises(ValueError, match=r"k must be in \[1, 5\]"):
            knn(pool, np.zeros(pool.dim), k=6)
        with pytest.raises(ValueError, match=r"k must be in \[1, 5\]"):
            knn(pool, np.zeros(pool.dim), k=0)

    def test_query_dim_check(self):
        pool = random_pool(seed=5, d=4)
        with pytest.raises(ValueError, match="length-4"):
            knn(pool, np.zeros(3), k=1)


class TestLabelView:
    def test_composition_of_knn_and_labels(self):
        pool = random_pool(seed=6)
        rng = np.random.default_rng(7)
        q = rng.standard_normal(pool.dim)
        lv = encode_label_view(pool, q, k=5)
        manual = np.concatenate([pool.labels[i].astype(np.float64)
                                 for i, _ in knn(pool, q, 5)])
        assert np.array_equal(lv.values, manual)
        assert lv.k == 5

    def test_exactly_k_ones(self):
        pool = random_pool(seed=8, num_classes=4)
        rng = np.random.default_rng(9)
        for k in (1, 3, 10):
            lv = encode_label_view(pool, rng.standard_normal(pool.dim), k)
            assert lv.values.sum() == k
            assert len(lv.values) == k * pool.num_classes

    def test_block_validation(self):
        with pytest.raises(ValueError, match="one-hot"):
            LabelViewVector(values=np.array([1.0, 1.0, 0.0, 1.0]), k=2)

    def test_positive_scaling_keeps_neighbor_labels(self):
        # scaling all features and the query by the same factor must not
        # change which exemplars are picked
        pool = random_pool(seed=10)
        scaled = CandidatePool(features=pool.features * 7.5, labels=pool.labels)
        rng = np.random.default_rng(11)
        q = rng.standard_normal(pool.dim)
        a = encode_label_view(pool, q, k=6)
        b = encode_label_view(scaled, q * 7.5, k=6)
        assert np.array_equal(a.values, b.values)


class TestFuse:
    def test_concatenation_and_scaling(self):
        lv = LabelViewVector(values=np.array([0.0, 1.0, 1.0, 0.0]), k=2)
        out = fuse(np.array([3.0, -2.0]), lv, FusionConfig(lam=0.5))
        assert np.array_equal(out, [3.0, -2.0, 0.0, 0.5, 0.5, 0.0])

    def test_unit_lambda_plain_concat(self):
        lv = LabelViewVector(values=np.array([1.0, 0.0]), k=1)
        out = fuse(np.array([9.0]), lv, FusionConfig(lam=1.0))
        assert np.array_equal(out, [9.0, 1.0, 0.0])

    def test_length_property(self):
        pool = random_pool(seed=12, num_classes=3)
        rng = np.random.default_rng(13)
        f = rng.standard_normal(11)
        lv = encode_label_view(pool, rng.standard_normal(pool.dim), k=4)
        assert fuse(f, lv, FusionConfig(lam=2.0)).shape == (11 + 4 * 3,)

    def test_lambda_positive(self):
        with pytest.raises(ValueError, match="lambda"):
            FusionConfig(lam=0.0)


class TestBuildPool:
    def test_projection_oracle(self):
        rng = np.random.default_rng(14)
        w = MetricProjection(w=rng.standard_normal((3, 6)))
        exemplars = [LabeledExemplar(class_index=i % 4,
                                     features=rng.standard_normal(6))
                     for i in range(20)]
        pool = build_pool(exemplars, w, num_classes=4)
        for i, ex in enumerate(exemplars):
            assert np.allclose(pool.features[i], w.w @ ex.features, atol=1e-15)
            assert pool.class_indices[i] == ex.class_index

    def test_partial_coverage(self):
        rng = np.random.default_rng(15)
        w = MetricProjection(w=np.eye(4))
        exemplars = [LabeledExemplar(class_index=c, features=rng.standard_normal(4))
                     for c in (0, 0, 2, 2)]
        pool = build_pool(exemplars, w, num_classes=5)
        assert pool.class_coverage == frozenset({0, 2})
        assert pool.num_classes == 5

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            build_pool([], MetricProjection(w=np.eye(2)), num_classes=2)

    def test_class_out_of_range(self):
        ex = [LabeledExemplar(class_index=7, features=np.zeros(2))]
        with pytest.raises(ValueError, match="out of"):
            build_pool(ex, MetricProjection(w=np.eye(2)), num_classes=3)


class TestEncodeBagViews:
    def test_matches_sequential_composition(self):
        rng = np.random.default_rng(16)
        dim, k = 8, 4
        raw = rng.standard_normal((200, dim))
        std_pca = pca_fit(raw, energy=0.9)
        w = MetricProjection(w=rng.standard_normal((3, dim)))
        exemplars = [LabeledExemplar(class_index=i % 3,
                                     features=rng.standard_normal(dim))
                     for i in range(30)]
        pool = build_pool(exemplars, w, num_classes=3)
        bag = Bag(id="b", instances=rng.standard_normal((6, dim)),
                  labels=np.array([1, 0, 0], dtype=np.uint8))
        cfg = FusionConfig(lam=0.25)

        got = encode_bag_views(bag, std_pca, w, pool, k, cfg)
        assert got.shape == (6, std_pca.output_dim + k * 3)
        d_pca = std_pca.output_dim
        batch_f = pca_project(std_pca, bag.instances)
        for r in range(6):
            # the discrete label block must match the one-query route
            # exactly; the continuous block matches the batch projection
            # bit for bit and the single-row route to rounding
            lv = encode_label_view(pool, project(w, bag.instances[r]), k)
            assert np.array_equal(got[r, d_pca:], cfg.lam * lv.values)
            assert np.array_equal(got[r, :d_pca], batch_f[r])
            f = pca_project(std_pca, bag.instances[r])
            assert np.allclose(got[r], fuse(f, lv, cfg), atol=1e-12)

    def test_partial_pool_accepted(self):
        rng = np.random.default_rng(17)
        dim = 5
        raw = rng.standard_normal((50, dim))
        std_pca = pca_fit(raw, energy=1.0)
        w = MetricProjection(w=np.eye(dim))
        exemplars = [LabeledExemplar(class_index=0, features=rng.standard_normal(dim)),
                     LabeledExemplar(class_index=1, features=rng.standard_normal(dim))]
        pool = build_pool(exemplars, w, num_classes=4)
        bag = Bag(id="b", instances=rng.standard_normal((3, dim)),
                  labels=np.array([0, 0, 1, 0], dtype=np.uint8))
        out = encode_bag_views(bag, std_pca, w, pool, k=2, cfg=FusionConfig(lam=1.0))
        assert out.shape == (3, std_pca.output_dim + 2 * 4)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        pool = random_pool(seed=18, m=23, d=5, num_classes=4)
        path = tmp_path / "p.milq"
        save_pool(pool, path)
        back = load_pool(path)
        assert back.features.tobytes() == pool.features.tobytes()
        assert back.labels.tobytes() == pool.labels.tobytes()
