import numpy as np
import pytest

from fgts.feature_store import FeatureTensor, TokenLayout
from fgts.fisher import (
    FisherError,
    SelectionConfig,
    TokenRanking,
    aggregate,
    compute_class_stats,
    embed_many,
    fisher_scores,
    select_top_k,
)


def flat_layout(n_tokens):
    return TokenLayout(n_cls=0, n_reg=0, grid_h=1, grid_w=n_tokens)


def tensors_from_array(arr, layout):
    # arr: (n_samples, n_tokens, dim)
    return [FeatureTensor(layout=layout, data=a.astype(np.float32)) for a in arr]


def naive_fisher(real, fake, eps):
    """Loop reference: per-dim ratio of squared mean gap to summed unbiased
    variances, averaged over dims."""
    n_tok, n_dim = real.shape[1], real.shape[2]
    scores = []
    for t in range(n_tok):
        acc = 0.0
        for d in range(n_dim):
            r = real[:, t, d]
            f = fake[:, t, d]
            mr, mf = r.mean(), f.mean()
            vr = r.var(ddof=1)
            vf = f.var(ddof=1)
            acc += (mr - mf) ** 2 / (vr + vf + eps)
        scores.append(acc / n_dim)
    order = sorted(range(n_tok), key=lambda i: (-scores[i], i))
    return np.asarray(scores), order


class TestClassStats:
    def test_identical_reals_zero_variance(self):
        layout = flat_layout(3)
        sample = np.ones((3, 2))
        reals = tensors_from_array(np.stack([sample, sample]), layout)
        fakes = tensors_from_array(np.stack([sample * 2, sample * 3]), layout)
        stats = compute_class_stats(reals + fakes, ["real", "real", "fake", "fake"], scope="all")
        assert np.all(stats.var_real == 0)

    def test_hand_computed_1d(self):
        layout = flat_layout(1)
        arrs = np.array([[[0.0]], [[2.0]], [[1.0]], [[3.0]]])
        stats = compute_class_stats(
            tensors_from_array(arrs, layout), ["real", "real", "fake", "fake"], scope="all"
        )
        assert stats.mean_real[0, 0] == pytest.approx(1.0)
        assert stats.var_real[0, 0] == pytest.approx(2.0)  # n-1 divisor
        assert stats.mean_fake[0, 0] == pytest.approx(2.0)
        assert stats.var_fake[0, 0] == pytest.approx(2.0)
        ranking = fisher_scores(stats, eps=0.0)
        assert ranking.scores[0] == pytest.approx(0.25)  # (1-2)^2/(2+2)

    def test_mixed_layout_rejected(self):
        a = FeatureTensor(layout=flat_layout(2), data=np.zeros((2, 1), np.float32))
        b = FeatureTensor(layout=flat_layout(3), data=np.zeros((3, 1), np.float32))
        with pytest.raises(FisherError, match="mixed layouts"):
            compute_class_stats([a, a, b, b], ["real", "real", "fake", "fake"], scope="all")

    def test_single_sample_class_rejected(self):
        a = FeatureTensor(layout=flat_layout(2), data=np.zeros((2, 1), np.float32))
        with pytest.raises(FisherError, match="need >= 2"):
            compute_class_stats([a, a, a], ["real", "real", "fake"], scope="all")


class TestFisherScores:
    def test_identical_stats_all_zero_tiebreak(self):
        layout = flat_layout(4)
        rng = np.random.default_rng(0)
        arr = rng.normal(size=(3, 4, 2))
        both = np.concatenate([arr, arr])
        stats = compute_class_stats(
            tensors_from_array(both, layout), ["real"] * 3 + ["fake"] * 3, scope="all"
        )
        ranking = fisher_scores(stats)
        assert np.all(ranking.scores == 0)
        assert ranking.sorted_indices == [0, 1, 2, 3]

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            n_tok = int(rng.integers(1, 9))
            n_dim = int(rng.integers(1, 5))
            n = int(rng.integers(2, 21))
            # round through float32 so oracle and implementation see identical inputs
            real = rng.normal(size=(n, n_tok, n_dim)).astype(np.float32).astype(np.float64)
            fake = rng.normal(size=(n, n_tok, n_dim)).astype(np.float32).astype(np.float64)
            layout = flat_layout(n_tok)
            stats = compute_class_stats(
                tensors_from_array(np.concatenate([real, fake]), layout),
                ["real"] * n + ["fake"] * n,
                scope="all",
            )
            ranking = fisher_scores(stats)
            exp_scores, exp_order = naive_fisher(real, fake, 1e-12)
            np.testing.assert_allclose(ranking.scores, exp_scores, atol=1e-12, rtol=0)
            assert ranking.sorted_indices == exp_order

    def test_planted_signal_token_ranks_first(self):
        rng = np.random.default_rng(0)
        n = 1000
        real = rng.normal(size=(n, 3, 2))
        fake = rng.normal(size=(n, 3, 2))
        fake[:, 2, :] += 10.0  # 10-sigma gap on token 2 only
        layout = flat_layout(3)
        stats = compute_class_stats(
            tensors_from_array(np.concatenate([real, fake]), layout),
            ["real"] * n + ["fake"] * n,
            scope="all",
        )
        ranking = fisher_scores(stats)
        assert ranking.sorted_indices[0] == 2

    def test_class_swap_symmetry(self):
        rng = np.random.default_rng(3)
        arr = rng.normal(size=(10, 5, 3))
        layout = flat_layout(5)
        labels = ["real"] * 5 + ["fake"] * 5
        swapped = ["fake"] * 5 + ["real"] * 5
        tensors = tensors_from_array(arr, layout)
        s1 = fisher_scores(compute_class_stats(tensors, labels, scope="all"))
        s2 = fisher_scores(compute_class_stats(tensors, swapped, scope="all"))
        np.testing.assert_array_equal(s1.scores, s2.scores)

    def test_scale_covariance_of_ranking(self):
        rng = np.random.default_rng(5)
        arr = rng.normal(size=(20, 6, 3)) + rng.normal(size=(1, 6, 3))
        layout = flat_layout(6)
        labels = ["real"] * 10 + ["fake"] * 10
        base = fisher_scores(compute_class_stats(tensors_from_array(arr, layout), labels, scope="all"), eps=0.0)
        for c in (2.0, -3.0, 0.25):
            scaled = fisher_scores(
                compute_class_stats(tensors_from_array(arr * c, layout), labels, scope="all"), eps=0.0
            )
            assert scaled.sorted_indices == base.sorted_indices

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(11)
        arr = rng.normal(size=(12, 7, 2))
        arr[6:, 4, :] += 2.0
        layout = flat_layout(7)
        labels = ["real"] * 6 + ["fake"] * 6
        base = fisher_scores(compute_class_stats(tensors_from_array(arr, layout), labels, scope="all"))
        perm = rng.permutation(7)
        permuted = arr[:, perm, :]
        other = fisher_scores(compute_class_stats(tensors_from_array(permuted, layout), labels, scope="all"))
        # score of permuted token j equals score of original token perm[j]
        np.testing.assert_allclose(other.scores, base.scores[perm], rtol=0, atol=1e-15)

    def test_mean_gap_monotonicity(self):
        # growing the mean gap of one token (variances fixed) never lowers its rank
        layout = flat_layout(3)
        base = np.array(
            [[[0.0], [0.0], [0.0]], [[2.0], [2.0], [2.0]]]
        )  # real samples
        prev_rank = None
        for gap in (0.5, 1.0, 2.0, 4.0):
            fake = np.array([[[1.0], [1.0], [gap]], [[3.0], [3.0], [gap + 2.0]]])
            stats = compute_class_stats(
                tensors_from_array(np.concatenate([base, fake]), layout),
                ["real", "real", "fake", "fake"],
                scope="all",
            )
            ranking = fisher_scores(stats)
            rank = ranking.sorted_indices.index(2)
            if prev_rank is not None:
                assert rank <= prev_rank
            prev_rank = rank


class TestSelection:
    def ranking(self):
        return TokenRanking(
            scores=np.array([0.1, 0.5, 0.3]),
            token_indices=[10, 11, 12],
            sorted_indices=[11, 12, 10],
            layout=flat_layout(3),
        )

    def test_full_k_is_identity(self):
        r = self.ranking()
        assert sorted(select_top_k(r, SelectionConfig(k=3))) == [10, 11, 12]

    def test_topk_prefix(self):
        r = self.ranking()
        assert select_top_k(r, SelectionConfig(k=2)) == [11, 12]

    def test_random_k_deterministic(self):
        r = self.ranking()
        cfg = SelectionConfig(k=2, strategy="random_k", seed=7)
        assert select_top_k(r, cfg) == select_top_k(r, cfg)

    def test_k_out_of_range(self):
        with pytest.raises(FisherError, match="out of range"):
            select_top_k(self.ranking(), SelectionConfig(k=4))

    def test_random_equals_fisher_at_saturation(self):
        r = self.ranking()
        rnd = select_top_k(r, SelectionConfig(k=3, strategy="random_k", seed=1))
        assert sorted(rnd) == sorted(select_top_k(r, SelectionConfig(k=3)))


class TestAggregate:
    def test_single_index_verbatim(self):
        t = FeatureTensor(layout=flat_layout(3), data=np.arange(6, dtype=np.float32).reshape(3, 2))
        emb = aggregate(t, [1])
        np.testing.assert_array_equal(emb.z_out, t.data[1])

    def test_two_row_mean(self):
        t = FeatureTensor(layout=flat_layout(2), data=np.array([[0, 0], [2, 4]], np.float32))
        np.testing.assert_array_equal(aggregate(t, [0, 1]).z_out, [1, 2])

    def test_all_patch_equals_patch_mean(self):
        layout = TokenLayout()
        rng = np.random.default_rng(0)
        t = FeatureTensor(layout=layout, data=rng.normal(size=(201, 4)).astype(np.float32))
        emb = aggregate(t, layout.patch_indices())
        np.testing.assert_allclose(emb.z_out, t.data[5:].astype(np.float64).mean(axis=0), rtol=0, atol=1e-12)

    def test_empty_indices_rejected(self):
        t = FeatureTensor(layout=flat_layout(2), data=np.zeros((2, 2), np.float32))
        with pytest.raises(FisherError, match="empty index list"):
            aggregate(t, [])


class TestRankingArtifact:
    def test_json_roundtrip(self, tmp_path):
        r = TokenRanking(
            scores=np.array([0.25, 0.5]),
            token_indices=[0, 1],
            sorted_indices=[1, 0],
            layout=flat_layout(2),
        )
        path = tmp_path / "ranking.json"
        r.save(path)
        back = TokenRanking.load(path)
        assert back.sorted_indices == r.sorted_indices
        np.testing.assert_array_equal(back.scores, r.scores)
        assert back.ranking_scope == "patch_only"
