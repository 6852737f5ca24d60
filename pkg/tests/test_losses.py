import math

import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st

from playgen.config import LossWeights
from playgen.distributions import DiagonalGaussian
from playgen.losses import (
    LossTerms,
    PerceptualExtractor,
    TrainingError,
    action_matching_loss,
    feature_recon_loss,
    frame_pyramid,
    joint_probability_matrix,
    kl_diag_gaussians,
    l1_loss,
    mutual_information_loss,
    perceptual_recon_loss,
    prior_kl_loss,
    total_loss,
)

from conftest import seeded_gaussian


def t(values):
    return torch.tensor(values, dtype=torch.float64)


class TestL1:
    def test_identity(self):
        pyr = [torch.rand(2, 3, 4, 4), torch.rand(2, 3, 8, 8)]
        assert l1_loss(pyr, [p.clone() for p in pyr]).item() == 0

    def test_constant_offset(self):
        target = [torch.zeros(1, 1, 2, 2)]
        recon = [torch.full((1, 1, 2, 2), 0.5)]
        assert l1_loss(recon, target).item() == pytest.approx(0.5)

    def test_two_scale_arithmetic(self):
        recon = [t([[[[0.2]]]]), t([[[[0.1]]]])]
        target = [t([[[[0.6]]]]), t([[[[0.3]]]])]
        assert l1_loss(recon, target).item() == pytest.approx(0.3)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            l1_loss([torch.zeros(1, 1, 2, 2)], [torch.zeros(1, 1, 3, 3)])


class _IdentityExtractor(nn.Module):
    def forward(self, x):
        return [x]


class TestPerceptual:
    def test_identity(self):
        ext = PerceptualExtractor(seed=0)
        pyr = [torch.rand(2, 3, 16, 16)]
        assert perceptual_recon_loss(pyr, [p.clone() for p in pyr], ext).item() == 0

    def test_single_feature_arithmetic(self):
        ext = _IdentityExtractor()
        recon = [t([[[[5.0]]]])]
        target = [t([[[[2.0]]]])]
        assert perceptual_recon_loss(recon, target, ext).item() == pytest.approx(3.0)

    def test_positive_on_differing_inputs(self):
        ext = PerceptualExtractor(seed=0)
        gen = torch.Generator().manual_seed(1)
        for _ in range(5):
            x = torch.rand(1, 3, 16, 16, generator=gen)
            y = torch.rand(1, 3, 16, 16, generator=gen)
            assert perceptual_recon_loss([x], [y], ext).item() > 0

    def test_extractor_frozen(self):
        ext = PerceptualExtractor(seed=0)
        assert all(not p.requires_grad for p in ext.parameters())
        ext.train()
        assert not ext.training


class TestFeatureRecon:
    def test_identity(self):
        f = torch.rand(3, 2, 4, 4)
        assert feature_recon_loss(f, f.clone()).item() == 0

    def test_arithmetic(self):
        assert feature_recon_loss([t([1.0, 1.0])], [t([2.0, 3.0])]).item() == pytest.approx(5.0)

    def test_stop_gradient_blocks_real_path(self):
        f = torch.rand(2, 3, requires_grad=True)
        f_hat = torch.rand(2, 3, requires_grad=True)
        loss = feature_recon_loss(f, f_hat)
        loss.backward()
        assert f.grad is None
        assert f_hat.grad is not None and f_hat.grad.abs().sum() > 0

    def test_value_unchanged_by_stop_gradient(self):
        f = torch.rand(2, 3, requires_grad=True)
        f_hat = torch.rand(2, 3)
        with_grad = feature_recon_loss(f, f_hat).item()
        plain = ((f.detach() - f_hat) ** 2).sum(1).mean().item()
        assert with_grad == pytest.approx(plain)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            feature_recon_loss([t([1.0])], [t([1.0]), t([2.0])])


class TestJointMatrix:
    def test_outer_product_single_pair(self):
        j = joint_probability_matrix(t([1.0, 0.0]), t([0.0, 1.0]))
        assert torch.equal(j, t([[0.0, 1.0], [0.0, 0.0]]))

    def test_matched_one_hots(self):
        p = t([[1.0, 0.0], [0.0, 1.0]])
        j = joint_probability_matrix(p, p)
        assert torch.equal(j, t([[0.5, 0.0], [0.0, 0.5]]))

    def test_uniform(self):
        p = t([[0.5, 0.5], [0.5, 0.5]])
        j = joint_probability_matrix(p, p)
        assert torch.allclose(j, torch.full((2, 2), 0.25, dtype=torch.float64))

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            joint_probability_matrix(torch.zeros(0, 3), torch.zeros(0, 3))

    @given(st.integers(2, 6), st.integers(1, 12), st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_marginals_sum_to_one(self, k, n, seed):
        gen = torch.Generator().manual_seed(seed)
        p = torch.softmax(torch.randn(n, k, generator=gen, dtype=torch.float64), -1)
        q = torch.softmax(torch.randn(n, k, generator=gen, dtype=torch.float64), -1)
        j = joint_probability_matrix(p, q)
        assert (j >= 0).all()
        assert j.sum().item() == pytest.approx(1.0, abs=1e-6)
        assert j.sum(1).sum().item() == pytest.approx(1.0, abs=1e-6)
        assert j.sum(0).sum().item() == pytest.approx(1.0, abs=1e-6)


class TestMutualInformation:
    def test_independent_joint_is_zero(self):
        a = t([0.2, 0.3, 0.5])
        b = t([0.6, 0.1, 0.3])
        assert mutual_information_loss(torch.outer(a, b)).item() == pytest.approx(0.0, abs=1e-12)

    def test_half_identity(self):
        loss = mutual_information_loss(0.5 * torch.eye(2, dtype=torch.float64))
        assert loss.item() == pytest.approx(-math.log(2), abs=1e-12)

    def test_diagonal_is_minimum(self):
        for k in (2, 3, 5):
            loss = mutual_information_loss(torch.eye(k, dtype=torch.float64) / k)
            assert loss.item() == pytest.approx(-math.log(k), abs=1e-12)

    def test_negative_entries_rejected(self):
        with pytest.raises(ValueError):
            mutual_information_loss(t([[0.5, -0.1], [0.3, 0.3]]))

    @given(st.integers(2, 6), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_range(self, k, seed):
        gen = torch.Generator().manual_seed(seed)
        j = torch.rand(k, k, generator=gen, dtype=torch.float64)
        j = j / j.sum()
        loss = mutual_information_loss(j).item()
        assert -math.log(k) - 1e-9 <= loss <= 1e-9


class TestKL:
    def test_identity(self):
        q = seeded_gaussian((6,), seed=0)
        assert kl_diag_gaussians(q, q).item() == pytest.approx(0.0, abs=1e-6)

    def test_unit_shift(self):
        q = DiagonalGaussian(t([1.0]), t([1.0]))
        p = DiagonalGaussian(t([0.0]), t([1.0]))
        assert kl_diag_gaussians(q, p).item() == pytest.approx(0.5)

    def test_monte_carlo_oracle(self):
        n = 100_000
        q = seeded_gaussian((2,), seed=21)
        p = seeded_gaussian((2,), seed=22)
        kl = kl_diag_gaussians(q, p).item()
        gen = torch.Generator().manual_seed(23)
        x = q.mean + q.variance.sqrt() * torch.randn(n, 2, generator=gen)

        def log_prob(dist, x):
            return (
                -0.5 * ((x - dist.mean) ** 2 / dist.variance)
                - 0.5 * torch.log(2 * math.pi * dist.variance)
            ).sum(-1)

        diff = log_prob(q, x) - log_prob(p, x)
        se = diff.std().item() / math.sqrt(n)
        assert abs(diff.mean().item() - kl) <= 3 * se

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kl_diag_gaussians(seeded_gaussian((2,), seed=0), seeded_gaussian((3,), seed=1))

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_non_negative(self, seed):
        q = seeded_gaussian((4,), seed=seed)
        p = seeded_gaussian((4,), seed=seed + 1)
        assert kl_diag_gaussians(q, p).item() >= -1e-9


class TestActionMatching:
    def test_identical_pairs(self):
        d = seeded_gaussian((5, 3), seed=2)
        assert action_matching_loss(d, d).item() == pytest.approx(0.0, abs=1e-6)

    def test_batch_average(self):
        # one zero-KL pair and one KL=1 pair average to 0.5
        mean = t([[0.0], [0.0]])
        var = t([[1.0], [1.0]])
        d = DiagonalGaussian(mean, var)
        d_hat = DiagonalGaussian(t([[0.0], [math.sqrt(2.0)]]), var.clone())
        assert action_matching_loss(d_hat, d).item() == pytest.approx(0.5)

    def test_empty_batch(self):
        empty = DiagonalGaussian(torch.zeros(0, 2), torch.ones(0, 2))
        with pytest.raises(ValueError):
            action_matching_loss(empty, empty)


class TestPriorKL:
    def test_standard_normal_is_zero(self):
        d = DiagonalGaussian(torch.zeros(4, 3), torch.ones(4, 3))
        assert prior_kl_loss(d).item() == pytest.approx(0.0)

    def test_shifted(self):
        d = DiagonalGaussian(t([[1.0]]), t([[1.0]]))
        assert prior_kl_loss(d).item() == pytest.approx(0.5)

    def test_wide(self):
        d = DiagonalGaussian(t([[0.0]]), t([[4.0]]))
        assert prior_kl_loss(d).item() == pytest.approx(0.5 * (4 - 1 - math.log(4)))


class TestTotalLoss:
    def make_terms(self, values):
        keys = ["l1", "rec_frames", "rec_features", "rec_actions", "action_info", "prior_kl"]
        return LossTerms(**{k: torch.tensor(v) for k, v in zip(keys, values)})

    def test_zero_weights(self):
        terms = self.make_terms([0.4, 0.6, 9.0, 9.0, 9.0, 9.0])
        w = LossWeights(0.0, 0.0, 0.0, 0.0)
        assert total_loss(terms, w).item() == pytest.approx(1.0)

    def test_unit_everything(self):
        terms = self.make_terms([1.0] * 6)
        w = LossWeights(1.0, 1.0, 1.0, 1.0)
        assert total_loss(terms, w).item() == pytest.approx(6.0)

    def test_weighted_arithmetic(self):
        terms = self.make_terms([0.2, 0.3, 0.1, 0.05, -0.5, 0.4])
        w = LossWeights(1.0, 0.1, 0.05, 0.1)
        assert total_loss(terms, w).item() == pytest.approx(0.62)

    def test_nan_identified(self):
        terms = self.make_terms([0.1, 0.1, float("nan"), 0.1, 0.1, 0.1])
        with pytest.raises(TrainingError, match="rec_features"):
            total_loss(terms, LossWeights())


class TestFramePyramid:
    def test_scales_and_alignment(self):
        frames = torch.rand(2, 4, 3, 16, 16)
        pyr = frame_pyramid(frames, 3)
        assert [p.shape[-1] for p in pyr] == [4, 8, 16]
        assert torch.equal(pyr[-1], frames)
        assert pyr[0].shape[:2] == (2, 4)
