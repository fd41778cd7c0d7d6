import numpy as np
import pytest

from fgts.classifiers import (
    CentroidModel,
    ClassifierError,
    LinearProbe,
    TrainingMeta,
    centroid_predict,
    centroid_scores,
    fit_centroids,
    fit_probe,
    probe_predict,
    probe_scores,
)


def gaussian_clusters(n_per_class, dim, sep, sigma, seed):
    """Two spherical clusters at +/- sep*e1; labels real (-) / fake (+)."""
    rng = np.random.default_rng(seed)
    real = rng.normal(0, sigma, size=(n_per_class, dim))
    real[:, 0] -= sep
    fake = rng.normal(0, sigma, size=(n_per_class, dim))
    fake[:, 0] += sep
    x = np.vstack([real, fake])
    labels = ["real"] * n_per_class + ["fake"] * n_per_class
    return x, labels


class TestCentroids:
    def test_single_embedding_is_its_centroid(self):
        e = np.array([1.0, 2.0, 3.0])
        model = fit_centroids(np.stack([e, [5.0, 5.0, 5.0]]), ["real", "fake"])
        np.testing.assert_array_equal(model.mu_real, e)

    def test_mean_of_two_reals(self):
        emb = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
        model = fit_centroids(emb, ["real", "real", "fake"])
        np.testing.assert_array_equal(model.mu_real, [0.5, 0.5])

    def test_empty_class_rejected(self):
        with pytest.raises(ClassifierError, match="empty class"):
            fit_centroids(np.ones((2, 3)), ["real", "real"])

    def test_monte_carlo_separated_gaussians(self):
        # 1000+1000 reference draws, class means (+-1, 0, ...), sigma 0.1
        x, labels = gaussian_clusters(1000, 8, 1.0, 0.1, seed=0)
        model = fit_centroids(x, labels)
        held, held_labels = gaussian_clusters(500, 8, 1.0, 0.1, seed=1)
        scores = centroid_scores(model, held)
        pred = np.where(scores >= 0, "fake", "real")
        assert np.mean(pred == np.asarray(held_labels)) == 1.0

    def test_predict_self_centroids(self):
        model = CentroidModel(mu_real=np.array([1.0, 0.0]), mu_fake=np.array([0.0, 1.0]), k=1, token_indices=[0])
        assert centroid_predict(model, model.mu_real).label == "real"
        assert centroid_predict(model, model.mu_fake).label == "fake"

    def test_orthogonal_tie_classifies_fake(self):
        model = CentroidModel(mu_real=np.array([1.0, 0.0, 0.0]), mu_fake=np.array([0.0, 1.0, 0.0]), k=1, token_indices=[0])
        pred = centroid_predict(model, np.array([0.0, 0.0, 1.0]))
        assert pred.score == 0.0
        assert pred.label == "fake"

    def test_zero_norm_embedding_rejected(self):
        model = CentroidModel(mu_real=np.array([1.0, 0.0]), mu_fake=np.array([0.0, 1.0]), k=1, token_indices=[0])
        with pytest.raises(ClassifierError, match="cosine undefined"):
            centroid_predict(model, np.zeros(2))

    def test_scale_invariance(self):
        model = CentroidModel(mu_real=np.array([1.0, 0.2]), mu_fake=np.array([0.3, 1.0]), k=1, token_indices=[0])
        z = np.array([0.5, 0.4])
        s1 = centroid_predict(model, z).score
        s2 = centroid_predict(model, 37.0 * z).score
        assert s1 == pytest.approx(s2, abs=1e-12)

    def test_label_swap_negates_score(self):
        x, labels = gaussian_clusters(50, 4, 1.0, 0.5, seed=2)
        m1 = fit_centroids(x, labels)
        m2 = fit_centroids(x, ["fake" if l == "real" else "real" for l in labels])
        z = np.array([0.3, -0.2, 0.1, 0.9])
        assert centroid_predict(m1, z).score == pytest.approx(-centroid_predict(m2, z).score, abs=1e-15)

    def test_artifact_roundtrip(self, tmp_path):
        model = fit_centroids(*gaussian_clusters(10, 3, 1.0, 0.2, seed=0), k=5, token_indices=[1, 2, 3, 4, 5])
        path = tmp_path / "centroid.json"
        model.save(path)
        back = CentroidModel.load(path)
        np.testing.assert_array_equal(back.mu_real, model.mu_real)
        assert back.token_indices == model.token_indices


class TestProbe:
    def test_separable_convergence(self):
        x, labels = gaussian_clusters(200, 8, 2.0, 0.3, seed=0)
        probe = fit_probe(x, labels)
        scores = probe_scores(probe, x)
        pred = np.where(scores >= 0, "fake", "real")
        assert np.mean(pred == np.asarray(labels)) >= 0.99

    def test_single_class_rejected(self):
        with pytest.raises(ClassifierError, match="single-class"):
            fit_probe(np.ones((4, 2)), ["real"] * 4)

    def test_duplicated_dataset_same_boundary(self):
        x, labels = gaussian_clusters(50, 4, 1.5, 0.4, seed=1)
        meta = TrainingMeta(epochs=30, batch_size=10_000)  # full-batch
        p1 = fit_probe(x, labels, meta=meta)
        p2 = fit_probe(np.vstack([x, x]), labels + labels, meta=meta)
        np.testing.assert_allclose(p1.weights, p2.weights, atol=1e-6, rtol=0)
        np.testing.assert_allclose(p1.bias, p2.bias, atol=1e-6, rtol=0)

    def test_full_batch_loss_non_increasing(self):
        x, labels = gaussian_clusters(100, 6, 1.5, 0.4, seed=2)
        meta = TrainingMeta(epochs=50, batch_size=10_000)
        probe = fit_probe(x, labels, meta=meta)
        diffs = np.diff(probe.loss_history)
        assert np.all(diffs <= 1e-4)

    def test_bit_reproducible(self):
        x, labels = gaussian_clusters(64, 5, 1.0, 0.5, seed=3)
        p1 = fit_probe(x, labels, meta=TrainingMeta(epochs=5))
        p2 = fit_probe(x, labels, meta=TrainingMeta(epochs=5))
        assert p1.weights.tobytes() == p2.weights.tobytes()
        assert p1.bias.tobytes() == p2.bias.tobytes()

    def test_zero_probe_tie_is_fake(self):
        probe = LinearProbe(weights=np.zeros((2, 3)), bias=np.zeros(2))
        pred = probe_predict(probe, np.array([1.0, -2.0, 0.5]))
        assert pred.score == 0.0
        assert pred.label == "fake"

    def test_bias_dominance(self):
        probe = LinearProbe(weights=np.zeros((2, 3)), bias=np.array([0.0, 10.0]))
        for z in (np.array([1.0, 0.0, 0.0]), np.array([-5.0, 3.0, 2.0])):
            assert probe_predict(probe, z).label == "fake"

    def test_dimension_mismatch(self):
        probe = LinearProbe(weights=np.zeros((2, 3)), bias=np.zeros(2))
        with pytest.raises(ClassifierError, match="dimension mismatch"):
            probe_predict(probe, np.zeros(4))

    def test_heldout_accuracy(self):
        x, labels = gaussian_clusters(500, 16, 2.0, 0.4, seed=4)
        probe = fit_probe(x, labels)
        held, held_labels = gaussian_clusters(500, 16, 2.0, 0.4, seed=5)
        scores = probe_scores(probe, held)
        pred = np.where(scores >= 0, "fake", "real")
        assert np.mean(pred == np.asarray(held_labels)) >= 0.99

    def test_artifact_roundtrip_float32_payload(self, tmp_path):
        x, labels = gaussian_clusters(30, 4, 1.0, 0.4, seed=6)
        probe = fit_probe(x, labels, meta=TrainingMeta(epochs=3))
        probe.token_indices = [7, 8, 9]
        path = tmp_path / "probe.json"
        probe.save(path)
        back = LinearProbe.load(path)
        # persisted as float32, so compare at float32 resolution
        np.testing.assert_array_equal(back.weights, probe.weights.astype(np.float32).astype(np.float64))
        assert back.normalize_input == probe.normalize_input
        assert back.token_indices == [7, 8, 9]
        assert back.training_meta.epochs == 3
