"""Fusion, the rating head, and baseline predictors against hand oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from mcgraph import recommend as rec
from mcgraph.dataset import RatingRecord, from_records


class TestFuse:
    def test_concatenates_in_view_order(self):
        e1 = np.array([[1.0, 2.0, 3.0]])
        e2 = np.array([[4.0, 5.0, 6.0]])
        fused = rec.fuse([e1, e2], num_users=1)
        assert_allclose(fused.matrix, [[1, 2, 3, 4, 5, 6]])

    def test_four_views_of_width_64_give_256(self):
        views = [np.zeros((5, 64)) for _ in range(4)]
        assert rec.fuse(views, num_users=3).matrix.shape == (5, 256)

    def test_single_view_is_identity(self):
        e = np.random.default_rng(0).normal(size=(4, 6))
        assert np.array_equal(rec.fuse([e], num_users=2).matrix, e)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="disagree"):
            rec.fuse([np.zeros((3, 4)), np.zeros((3, 5))], num_users=1)

    def test_slices_recover_views_bit_for_bit(self):
        rng = np.random.default_rng(1)
        views = [rng.normal(size=(6, 3)) for _ in range(3)]
        fused = rec.fuse(views, num_users=4)
        for c, e in enumerate(views):
            assert np.array_equal(fused.matrix[:, 3 * c:3 * (c + 1)], e)


class TestUserSimilarity:
    def test_identical_vectors_score_one(self):
        v = np.array([0.3, -1.2, 4.0])
        assert_allclose(rec.user_similarity(v, v), 1.0, atol=1e-12)

    def test_orthogonal_vectors_score_zero(self):
        assert rec.user_similarity(np.array([1.0, 0.0]),
                                   np.array([0.0, 1.0])) == 0.0

    def test_forty_five_degree_pair(self):
        sim = rec.user_similarity(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        assert_allclose(sim, 1.0 / np.sqrt(2.0), atol=1e-12)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            rec.user_similarity(np.zeros(3), np.ones(3))

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=4) + 0.1, rng.normal(size=4) + 0.1
        s1, s2 = rec.user_similarity(a, b), rec.user_similarity(b, a)
        assert s1 == s2
        assert -1.0 <= s1 <= 1.0


def make_fused(num_users, num_items, width, seed=0):
    rng = np.random.default_rng(seed)
    return rec.FusedEmbedding(rng.normal(size=(num_users + num_items, width)),
                              num_users=num_users, view_dim=width)


def constant_predictor(width, bias):
    return rec.RatingPredictor(weights=np.zeros(2 * width), bias=bias,
                               epsilon=0.1, regularization=1.0,
                               feature_mean=np.zeros(2 * width),
                               feature_scale=np.ones(2 * width))


class TestRatingHead:
    def dataset_from_targets(self, fused, pairs, targets):
        recs = [RatingRecord(f"u{u}", f"i{v}", y, (y,))
                for (u, v), y in zip(pairs, targets)]
        return from_records(recs)

    def all_pairs(self, n, m):
        return [(u, v) for u in range(n) for v in range(m)]

    def test_constant_targets_fit_exactly(self):
        fused = make_fused(4, 4, 6)
        pairs = self.all_pairs(4, 4)
        data = self.dataset_from_targets(fused, pairs, [4.0] * len(pairs))
        predictor = rec.train_predictor(fused, data, seed=0)
        assert rec.predict_rating(predictor, fused, 2, 3) == 4.0
        assert np.all(predictor.weights == 0.0)

    def test_linear_targets_reach_margin_accuracy(self):
        fused = make_fused(6, 5, 4, seed=3)
        pairs = self.all_pairs(6, 5)
        users = np.array([u for u, _ in pairs])
        items = np.array([v for _, v in pairs])
        feats = rec.pair_features(fused, users, items)
        by_col = (feats - feats.mean(0)) / feats.std(0)
        targets = 3.0 + 0.4 * by_col[:, 0] - 0.3 * by_col[:, 5]
        data = self.dataset_from_targets(fused, pairs, targets.tolist())
        predictor = rec.train_predictor(fused, data, seed=1)
        fitted = rec.predict_many(predictor, fused, users, items)
        assert np.abs(fitted - targets).mean() <= predictor.epsilon

    def test_beats_global_mean_on_signal_bearing_features(self):
        fused = make_fused(8, 8, 4, seed=5)
        rng = np.random.default_rng(7)
        # diagonal pairs first so the train dataset indexes rows identically
        # to the fused matrix
        off_diag = [(u, v) for u, v in self.all_pairs(8, 8) if u != v]
        rng.shuffle(off_diag)
        train_pairs = [(k, k) for k in range(8)] + off_diag[:32]
        test_pairs = off_diag[32:]

        all_users = np.array([u for u, _ in self.all_pairs(8, 8)])
        all_items = np.array([v for _, v in self.all_pairs(8, 8)])
        all_feats = rec.pair_features(fused, all_users, all_items)
        mu, sd = all_feats.mean(0), all_feats.std(0)

        def targets_for(pairs):
            users = np.array([u for u, _ in pairs])
            items = np.array([v for _, v in pairs])
            feats = (rec.pair_features(fused, users, items) - mu) / sd
            noise = rng.normal(0, 0.1, len(pairs))
            return np.clip(3.0 + 0.8 * feats[:, 1] + noise, 1.0, 5.0)

        train_y = targets_for(train_pairs)
        test_y = targets_for(test_pairs)
        train = self.dataset_from_targets(fused, train_pairs, train_y.tolist())
        predictor = rec.train_predictor(fused, train, seed=2)
        users = np.array([u for u, _ in test_pairs])
        items = np.array([v for _, v in test_pairs])
        preds = rec.predict_many(predictor, fused, users, items)
        model_mae = np.abs(preds - test_y).mean()
        mean_mae = np.abs(train_y.mean() - test_y).mean()
        assert model_mae < mean_mae

    def test_training_is_seed_deterministic(self):
        fused = make_fused(4, 4, 4)
        pairs = self.all_pairs(4, 4)
        rng = np.random.default_rng(9)
        data = self.dataset_from_targets(fused, pairs,
                                         rng.uniform(1, 5, len(pairs)).tolist())
        p1 = rec.train_predictor(fused, data, seed=4)
        p2 = rec.train_predictor(fused, data, seed=4)
        assert np.array_equal(p1.weights, p2.weights)
        assert p1.bias == p2.bias

    def test_empty_training_set_rejected(self):
        fused = make_fused(2, 2, 4)
        data = from_records([RatingRecord("u0", "i0", 3.0, (3.0,))])
        empty = type(data)(2, 2, 1, (), data.user_index, data.item_index)
        with pytest.raises(ValueError, match="empty"):
            rec.train_predictor(fused, empty)


class TestPredictRating:
    def test_zero_weights_return_bias(self):
        fused = make_fused(3, 3, 5)
        predictor = constant_predictor(5, bias=3.2)
        assert rec.predict_rating(predictor, fused, 0, 0) == 3.2

    def test_high_raw_output_clamps_to_five(self):
        fused = make_fused(2, 2, 3)
        predictor = constant_predictor(3, bias=6.3)
        assert rec.predict_rating(predictor, fused, 1, 1) == 5.0

    def test_low_raw_output_clamps_to_one(self):
        fused = make_fused(2, 2, 3)
        predictor = constant_predictor(3, bias=-1.0)
        assert rec.predict_rating(predictor, fused, 0, 1) == 1.0

    def test_unknown_indices_rejected(self):
        fused = make_fused(2, 2, 3)
        predictor = constant_predictor(3, bias=3.0)
        with pytest.raises(IndexError, match="user"):
            rec.predict_rating(predictor, fused, 5, 0)
        with pytest.raises(IndexError, match="item"):
            rec.predict_rating(predictor, fused, 0, 7)


class TestTopK:
    def test_all_predictions_equal_orders_by_index(self):
        fused = make_fused(2, 5, 3)
        predictor = constant_predictor(3, bias=3.0)
        assert rec.recommend_top_k(predictor, fused, 0, 3) == [0, 1, 2]

    def test_k_beyond_unrated_count_returns_all_unrated(self):
        fused = make_fused(2, 4, 3)
        predictor = constant_predictor(3, bias=3.0)
        out = rec.recommend_top_k(predictor, fused, 0, 99,
                                  rated_items=frozenset({1}))
        assert out == [0, 2, 3]

    def test_planted_favorite_ranks_first(self):
        matrix = np.zeros((2 + 4, 2))
        matrix[2 + 3] = [1.0, 0.0]  # only item 3 carries the favored direction
        fused = rec.FusedEmbedding(matrix, num_users=2, view_dim=2)
        weights = np.zeros(4)
        weights[2] = 1.0  # reward the first item-feature column
        predictor = rec.RatingPredictor(weights=weights, bias=3.0, epsilon=0.1,
                                        regularization=1.0,
                                        feature_mean=np.zeros(4),
                                        feature_scale=np.ones(4))
        assert rec.recommend_top_k(predictor, fused, 0, 2)[0] == 3

    def test_invalid_k_rejected(self):
        fused = make_fused(2, 2, 3)
        with pytest.raises(ValueError):
            rec.recommend_top_k(constant_predictor(3, 3.0), fused, 0, 0)


# ---------------------------------------------------------------------------
# baselines

def pearson_oracle(ratings_u, ratings_v):
    common = sorted(set(ratings_u) & set(ratings_v))
    if len(common) < 2:
        return 0.0
    a = np.array([ratings_u[i] for i in common])
    b = np.array([ratings_v[i] for i in common])
    if a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def knn_oracle(train, test, k_neighbors, sim_fn):
    """Loop-based reference for the KNN family."""
    by_user = {}
    for r in train.records:
        by_user.setdefault(r.user_id, {})[r.item_id] = r.overall
    global_mean = np.mean([r.overall for r in train.records])

    out = []
    for rec_ in test.records:
        mine = by_user.get(rec_.user_id)
        if mine is None:
            out.append(global_mean)
            continue
        scored = []
        for other, ratings in by_user.items():
            if other == rec_.user_id or rec_.item_id not in ratings:
                continue
            s = sim_fn(rec_.user_id, other)
            if s > 0:
                scored.append((s, other, ratings[rec_.item_id]))
        scored.sort(key=lambda t: (-t[0], list(by_user).index(t[1])))
        scored = scored[:k_neighbors]
        if not scored:
            out.append(np.mean(list(mine.values())) if mine else global_mean)
            continue
        weights = np.array([s for s, _, _ in scored])
        values = np.array([v for _, _, v in scored])
        out.append(float(weights @ values / weights.sum()))
    return np.array(out)


def random_dataset(seed, n_users=8, n_items=10, density=0.6, criteria=3):
    rng = np.random.default_rng(seed)
    recs = []
    for u in range(n_users):
        for v in range(n_items):
            if rng.uniform() < density:
                crit = tuple(float(rng.integers(1, 6)) for _ in range(criteria))
                overall = float(rng.integers(1, 6))
                recs.append(RatingRecord(f"u{u}", f"i{v}", overall, crit))
    return from_records(recs)


class TestUserKnn:
    def test_clone_neighbor_dominates(self):
        recs = [
            RatingRecord("u0", "i0", 2.0, (2.0,)),
            RatingRecord("u0", "i1", 3.0, (3.0,)),
            RatingRecord("u0", "i2", 4.0, (4.0,)),
            RatingRecord("clone", "i0", 2.0, (2.0,)),
            RatingRecord("clone", "i1", 3.0, (3.0,)),
            RatingRecord("clone", "i2", 4.0, (4.0,)),
            RatingRecord("clone", "i3", 4.5, (4.5,)),
            RatingRecord("anti", "i0", 4.0, (4.0,)),
            RatingRecord("anti", "i1", 3.0, (3.0,)),
            RatingRecord("anti", "i2", 2.0, (2.0,)),
            RatingRecord("anti", "i3", 1.0, (1.0,)),
        ]
        train = from_records(recs)
        test = from_records([RatingRecord("u0", "i3", 4.0, (4.0,))])
        assert_allclose(rec.baseline_user_knn(train, test), [4.5], atol=1e-12)

    def test_no_positive_rater_falls_back_to_user_mean(self):
        recs = [
            RatingRecord("u0", "i0", 2.0, (2.0,)),
            RatingRecord("u0", "i1", 3.0, (3.0,)),
            RatingRecord("u0", "i2", 4.0, (4.0,)),
            RatingRecord("anti", "i0", 5.0, (5.0,)),
            RatingRecord("anti", "i1", 3.0, (3.0,)),
            RatingRecord("anti", "i2", 1.0, (1.0,)),
            RatingRecord("anti", "i3", 2.0, (2.0,)),
        ]
        train = from_records(recs)
        test = from_records([RatingRecord("u0", "i3", 3.0, (3.0,))])
        assert_allclose(rec.baseline_user_knn(train, test), [3.0], atol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_loop_oracle(self, seed):
        train = random_dataset(seed)
        test = random_dataset(seed + 100, density=0.2)
        by_user = {}
        for r in train.records:
            by_user.setdefault(r.user_id, {})[r.item_id] = r.overall

        def sim(u, v):
            return pearson_oracle(by_user.get(u, {}), by_user.get(v, {}))

        ours = rec.baseline_user_knn(train, test, k_neighbors=100)
        oracle = knn_oracle(train, test, 100, sim)
        assert_allclose(ours, oracle, atol=1e-10)


class TestMultiUserKnn:
    def test_single_criterion_equal_to_overall_matches_user_knn(self):
        rng = np.random.default_rng(11)
        recs = []
        for u in range(6):
            for v in range(8):
                if rng.uniform() < 0.6:
                    y = float(rng.integers(1, 6))
                    recs.append(RatingRecord(f"u{u}", f"i{v}", y, (y,)))
        train = from_records(recs)
        test = from_records([RatingRecord("u0", "i7", 3.0, (3.0,)),
                             RatingRecord("u1", "i0", 2.0, (2.0,))])
        assert_allclose(rec.baseline_multi_user_knn(train, test),
                        rec.baseline_user_knn(train, test), atol=1e-12)

    def test_opposed_criteria_cancel_to_zero_similarity(self):
        # two users agree perfectly on criteria 1-2 and disagree on 3-4
        recs = []
        for v, (c_ab) in enumerate([((1, 1), (1, 5)), ((3, 3), (3, 3)),
                                    ((5, 5), (5, 1))]):
            a, b = c_ab
            recs.append(RatingRecord("a", f"i{v}", 3.0,
                                     (float(a[0]), float(a[0]),
                                      float(a[1]), float(a[1]))))
            recs.append(RatingRecord("b", f"i{v}", 3.0,
                                     (float(b[0]), float(b[0]),
                                      float(b[1]), float(b[1]))))
        train = from_records(recs)
        ratings = {}
        present = {}
        sims = np.zeros((2, 2))
        for c in range(4):
            r, p = rec._rating_matrices(train, criterion=c)
            sims += rec.pearson_user_similarities(r, p)
        sims /= 4
        assert_allclose(sims[0, 1], 0.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_loop_oracle(self, seed):
        train = random_dataset(seed + 10)
        test = random_dataset(seed + 200, density=0.2)
        by_user_crit = [dict() for _ in range(train.num_criteria)]
        for r in train.records:
            for c in range(train.num_criteria):
                by_user_crit[c].setdefault(r.user_id, {})[r.item_id] = r.criteria[c]

        def sim(u, v):
            vals = [pearson_oracle(by_user_crit[c].get(u, {}),
                                   by_user_crit[c].get(v, {}))
                    for c in range(train.num_criteria)]
            return float(np.mean(vals))

        ours = rec.baseline_multi_user_knn(train, test, k_neighbors=100)
        oracle = knn_oracle(train, test, 100, sim)
        assert_allclose(ours, oracle, atol=1e-10)


class TestMlr:
    def consistent_dataset(self, seed, n=40, criteria=3):
        rng = np.random.default_rng(seed)
        recs = []
        for k in range(n):
            crit = tuple(float(rng.integers(1, 6)) for _ in range(criteria))
            recs.append(RatingRecord(f"u{k % 7}", f"i{k // 7}",
                                     float(np.mean(crit)), crit))
        return from_records(recs)

    def test_exact_recovery_when_overall_is_mean_of_criteria(self):
        train = self.consistent_dataset(0)
        test = self.consistent_dataset(99, n=20)
        preds = rec.baseline_mlr(train, test)
        actual = np.array([r.overall for r in test.records])
        assert np.abs(preds - actual).mean() < 1e-8

    def test_noise_free_linear_train_mae_tiny(self):
        rng = np.random.default_rng(3)
        w, b = np.array([0.3, 0.5, 0.1]), 0.4
        recs = []
        for k in range(30):
            crit = rng.uniform(1, 5, size=3)
            y = float(np.clip(crit @ w + b, 1.0, 5.0))
            recs.append(RatingRecord(f"u{k % 5}", f"i{k // 5}", y,
                                     tuple(crit.tolist())))
        train = from_records(recs)
        preds = rec.baseline_mlr(train, train)
        actual = np.array([r.overall for r in train.records])
        assert np.abs(preds - actual).mean() < 1e-8

    def test_single_criterion_regression(self):
        recs = [RatingRecord(f"u{k}", "i0", 2.0 * c - 0.5, (c,))
                for k, c in enumerate([1.0, 1.5, 2.0, 2.5])]
        train = from_records(recs)
        preds = rec.baseline_mlr(train, train)
        assert_allclose(preds, [r.overall for r in train.records], atol=1e-10)

    def test_constant_criteria_engage_ridge(self):
        recs = [RatingRecord(f"u{k}", "i0", float(1 + k % 5), (3.0, 3.0))
                for k in range(10)]
        train = from_records(recs)
        preds = rec.baseline_mlr(train, train)
        assert np.all(np.isfinite(preds))
        assert np.all((preds >= 1.0) & (preds <= 5.0))

    def test_too_few_records_rejected(self):
        train = from_records([RatingRecord("u0", "i0", 3.0, (3.0, 3.0, 3.0))])
        with pytest.raises(ValueError, match="records"):
            rec.baseline_mlr(train, train)


def test_predictions_file_format(tmp_path):
    test = from_records([RatingRecord("u1", "i1", 4.0, (4.0,)),
                         RatingRecord("u2", "i1", 2.5, (2.5,))])
    path = tmp_path / "preds.csv"
    rec.write_predictions(test, np.array([3.75, 2.0]), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "user_id,item_id,actual,predicted"
    assert lines[1] == "u1,i1,4.0,3.75"
    assert lines[2] == "u2,i1,2.5,2.0"
