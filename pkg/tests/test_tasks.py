import numpy as np
import pytest

from flowplugin.errors import ConfigError, PreconditionError
from flowplugin.flow import maf_flow
from flowplugin.numerics import Rng
from flowplugin.tasks import (
    ClassPrior,
    class_log_likelihoods,
    class_log_posteriors,
    classify,
    conditional_generate,
    flow_prior,
    manipulate_attributes,
    manipulate_latents,
)

from conftest import randomize


class FixedDensityFlow:
    """Stub whose per-class log densities are handed in directly."""

    def __init__(self, log_liks):
        self.log_liks = np.asarray(log_liks, dtype=np.float64)
        self.dim = 1
        self.context_dim = self.log_liks.shape[1]
        self.class_prior = None

    def log_prob(self, z, y):
        k = int(np.argmax(y[0]))
        return self.log_liks[:, k].copy()


class TestClassPrior:
    def test_validates_simplex(self):
        with pytest.raises(PreconditionError):
            ClassPrior(np.array([0.5, 0.6]))
        with pytest.raises(PreconditionError):
            ClassPrior(np.array([-0.1, 1.1]))
        ClassPrior(np.array([0.25, 0.75]))

    def test_uniform_and_counts(self):
        np.testing.assert_allclose(ClassPrior.uniform(4).probs, 0.25)
        np.testing.assert_allclose(ClassPrior.from_counts([3, 1]).probs, [0.75, 0.25])

    def test_zero_class_gives_neg_inf_log(self):
        lp = ClassPrior(np.array([1.0, 0.0])).log_probs()
        assert lp[0] == 0.0 and np.isneginf(lp[1])


class TestPosteriors:
    def test_direct_evaluation(self):
        flow = FixedDensityFlow(np.log([[0.8, 0.2]]))
        post = np.exp(class_log_posteriors(flow, ClassPrior.uniform(2), np.zeros((1, 1))))
        np.testing.assert_allclose(post, [[0.8, 0.2]], atol=1e-12)

    def test_uniform_densities_recover_prior(self):
        flow = FixedDensityFlow(np.full((3, 2), -1.7))
        prior = ClassPrior(np.array([0.3, 0.7]))
        post = np.exp(class_log_posteriors(flow, prior, np.zeros((3, 1))))
        np.testing.assert_allclose(post, np.tile(prior.probs, (3, 1)), atol=1e-12)

    def test_matches_linear_space_bayes(self):
        model = randomize(maf_flow(2, 3, layers=2, hidden=16, rng=Rng(1)), Rng(2), gain=0.6)
        z = Rng(3).normal(8, 2)
        prior = ClassPrior(np.array([0.2, 0.5, 0.3]))
        log_post = class_log_posteriors(model, prior, z)
        liks = np.exp(class_log_likelihoods(model, z, 3))
        joint = liks * prior.probs[None, :]
        expected = joint / joint.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(np.exp(log_post), expected, atol=1e-10)

    def test_rows_sum_to_one(self):
        model = randomize(maf_flow(2, 4, layers=2, hidden=16, rng=Rng(4)), Rng(5), gain=0.6)
        post = np.exp(class_log_posteriors(model, ClassPrior.uniform(4), Rng(6).normal(10, 2)))
        np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_prior_class_excluded_not_error(self):
        flow = FixedDensityFlow(np.log([[0.9, 0.1]]))
        prior = ClassPrior(np.array([0.0, 1.0]))
        post = class_log_posteriors(flow, prior, np.zeros((1, 1)))
        assert np.isneginf(post[0, 0])
        assert classify(flow, prior, np.zeros((1, 1)))[0] == 1


class TestClassify:
    def test_direct_example(self):
        flow = FixedDensityFlow(np.log([[0.8, 0.2]]))
        assert classify(flow, ClassPrior.uniform(2), np.zeros((1, 1)))[0] == 0

    def test_prior_scaling_leaves_argmax_unchanged(self):
        model = randomize(maf_flow(2, 3, layers=2, hidden=16, rng=Rng(7)), Rng(8), gain=0.6)
        z = Rng(9).normal(20, 2)
        weights = np.array([0.2, 0.5, 0.3])
        base = classify(model, ClassPrior(weights), z)
        for factor in (7.0, 0.001):
            np.testing.assert_array_equal(classify(model, weights * factor, z), base)

    def test_tie_breaks_to_lowest_index(self):
        flow = FixedDensityFlow(np.log([[0.5, 0.5]]))
        assert classify(flow, ClassPrior.uniform(2), np.zeros((1, 1)))[0] == 0

    def test_two_gaussian_accuracy(self, two_gaussian):
        model, ds = two_gaussian["model"], two_gaussian["ds"]
        z_val, y_val = ds.val_split()
        predicted = classify(model, flow_prior(model), z_val)
        accuracy = (predicted == y_val.argmax(axis=1)).mean()
        assert accuracy >= 0.99

    def test_flow_samples_classified_back(self, two_gaussian):
        model = two_gaussian["model"]
        prior = flow_prior(model)
        for cls in (0, 1):
            y = np.zeros((400, 2))
            y[:, cls] = 1.0
            draws = model.sample(y, Rng(300 + cls))
            assert (classify(model, prior, draws) == cls).mean() >= 0.95


class TestConditionalGenerate:
    def test_outputs_in_unit_interval(self, toy_pipeline):
        ae, flow = toy_pipeline["ae"], toy_pipeline["flow"]
        y = np.tile([[1.0, 0.0]], (50, 1))
        out = conditional_generate(flow, ae, y, Rng(31))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_same_seed_bit_identical(self, toy_pipeline):
        ae, flow = toy_pipeline["ae"], toy_pipeline["flow"]
        y = np.tile([[0.0, 1.0]], (20, 1))
        a = conditional_generate(flow, ae, y, Rng(32))
        b = conditional_generate(flow, ae, y, Rng(32))
        np.testing.assert_array_equal(a, b)

    def test_samples_near_their_class_centroid(self, toy_pipeline):
        ae, flow = toy_pipeline["ae"], toy_pipeline["flow"]
        centroids = toy_pipeline["centroids"]
        for cls in (0, 1):
            y = np.zeros((200, 2))
            y[:, cls] = 1.0
            out = conditional_generate(flow, ae, y, Rng(33 + cls))
            d_own = ((out - centroids[cls]) ** 2).mean(axis=1)
            d_other = ((out - centroids[1 - cls]) ** 2).mean(axis=1)
            assert (d_own < d_other).mean() >= 0.95

    def test_dimension_mismatch_is_config_error(self, toy_pipeline):
        flow = toy_pipeline["flow"]
        wrong = maf_flow(3, 2, layers=1, hidden=8, rng=Rng(34))
        with pytest.raises(ConfigError):
            conditional_generate(wrong, toy_pipeline["ae"], np.eye(2), Rng(35))
        with pytest.raises(ConfigError):
            conditional_generate(flow, toy_pipeline["ae"], np.ones((2, 5)), Rng(36))


class TestManipulate:
    def test_identity_edit_equals_reconstruction(self, toy_pipeline):
        ae, flow = toy_pipeline["ae"], toy_pipeline["flow"]
        x, y = toy_pipeline["x_test"][:40], toy_pipeline["y_test"][:40]
        edited = manipulate_attributes(flow, ae, x, y, y)
        assert np.abs(edited - ae.reconstruct(x)).max() < 1e-6

    def test_edit_then_reverse_edit_is_identity_in_latent_space(self, toy_pipeline):
        flow = toy_pipeline["flow"]
        ds = toy_pipeline["ds"]
        z, y = ds.val_split()
        y_other = y[:, ::-1].copy()
        there = manipulate_latents(flow, z, y, y_other)
        back = manipulate_latents(flow, there, y_other, y)
        assert np.abs(back - z).max() < 1e-6

    def test_edit_crosses_decision_boundary(self, toy_pipeline):
        flow = toy_pipeline["flow"]
        ds = toy_pipeline["ds"]
        z, y = ds.val_split()
        src_class = y.argmax(axis=1)
        y_other = y[:, ::-1].copy()
        edited = manipulate_latents(flow, z, y, y_other)
        predicted = classify(flow, flow_prior(flow), edited)
        assert (predicted == 1 - src_class).mean() >= 0.95

    def test_multi_attribute_edit_moves_known_directions(self):
        # flow trained on latents with two independent binary attributes
        from flowplugin.synthetic import binary_attribute_latents
        from flowplugin.trainer import LatentDataset, TrainConfig, train_flow

        z, attrs = binary_attribute_latents(1600, dim=4, attributes=2, rng=Rng(41))
        ds = LatentDataset.from_arrays(z, attrs, seed=42)
        flow = maf_flow(4, 2, layers=4, hidden=32, rng=Rng(43))
        flow, _ = train_flow(flow, ds, TrainConfig(
            epochs=40, batch_size=256, learning_rate=2e-3, seed=44, patience=10))
        z_val, a_val = ds.val_split()
        keep = a_val[:, 0] == 0
        z0, a0 = z_val[keep], a_val[keep]
        a_flipped = a0.copy()
        a_flipped[:, 0] = 1.0
        edited = manipulate_latents(flow, z0, a0, a_flipped)
        # attribute 0 shifts the first block of coordinates by +2.5
        shift = (edited - z0)[:, :2].mean()
        assert 1.5 < shift < 3.5
        # the untouched attribute's block barely moves
        assert abs((edited - z0)[:, 2:].mean()) < 0.5

    def test_dimension_mismatch_is_config_error(self, toy_pipeline):
        wrong = maf_flow(3, 2, layers=1, hidden=8, rng=Rng(45))
        with pytest.raises(ConfigError):
            manipulate_attributes(wrong, toy_pipeline["ae"],
                                  toy_pipeline["x_test"][:2],
                                  np.eye(2), np.eye(2))
