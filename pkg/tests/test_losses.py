"""Tests for the training objectives and their fixed networks."""

import pytest
import torch
import torch.nn as nn
import torch.nn.functional as F

from facedub.errors import ContractError, NumericalError, ShapeError
from facedub.losses import (
    PatchDiscriminator,
    PerceptualExtractor,
    SyncScorer,
    crop_regions,
    gan_d_loss,
    gan_g_loss,
    perception_loss,
    sync_loss,
    total_loss,
)
from tests.conftest import assert_close, assert_gradients_match, random_coordinates


def mean_discriminator(image):
    """D(I) = mean intensity, shape (B,)."""
    return image.mean(dim=(1, 2, 3))


def half_discriminator(image):
    """D(I) = 0.5 for every image."""
    return torch.full((image.shape[0],), 0.5, dtype=image.dtype)


class FixedConfidenceScorer:
    """A frozen scorer whose confidences are fixed at 0.5 and 1.0."""

    frozen = True

    def confidence(self, audio, frames, boxes=None):
        return torch.tensor([0.5, 1.0], dtype=torch.float64)


class TestGanLosses:
    """Test the least-squares GAN objectives against a closed-form discriminator."""

    def test_discriminator_loss(self):
        """Real at 0.8 and fake at 0.3 give 0.5 * 0.04 + 0.5 * 0.09."""
        real = torch.full((2, 3, 4, 4), 0.8, dtype=torch.float64)
        fake = torch.full((2, 3, 4, 4), 0.3, dtype=torch.float64)
        assert abs(float(gan_d_loss(mean_discriminator, real, fake)) - 0.065) < 1e-7

    def test_generator_loss(self):
        """A fake at 0.3 gives (0.3 - 1)^2."""
        fake = torch.full((2, 3, 4, 4), 0.3, dtype=torch.float64)
        assert abs(float(gan_g_loss(mean_discriminator, fake)) - 0.49) < 1e-7

    def test_constant_discriminator(self):
        """D = 0.5 everywhere gives L_D = 0.5 * 0.25 + 0.5 * 0.25 and L_G = 0.25."""
        real, fake = torch.rand(3, 3, 8, 8), torch.rand(3, 3, 8, 8)
        assert float(gan_d_loss(half_discriminator, real, fake)) == pytest.approx(0.25)
        assert float(gan_g_loss(half_discriminator, fake)) == pytest.approx(0.25)

    def test_fake_is_detached_for_discriminator(self):
        """L_D sends no gradient into the generator output."""
        fake = torch.rand(1, 3, 8, 8, requires_grad=True)
        gan_d_loss(PatchDiscriminator(8), torch.rand(1, 3, 8, 8), fake).backward()
        assert fake.grad is None

    def test_patch_discriminator_output(self):
        """The discriminator scores each image with one number."""
        assert PatchDiscriminator()(torch.rand(3, 3, 64, 48)).shape == (3,)


class TestTotalLoss:
    """Test the weighted sum."""

    def test_weights(self):
        """Unit terms sum to 10 + 0.1 + 1."""
        assert total_loss(1.0, 1.0, 1.0) == pytest.approx(11.1)
        assert total_loss(1.0, 1.0, 1.0, lambda_p=1.0, lambda_sync=0.0) == pytest.approx(2.0)

    def test_non_finite_term(self):
        """A NaN term raises NumericalError."""
        with pytest.raises(NumericalError):
            total_loss(torch.tensor(float("nan")), 0.0, 0.0)
        with pytest.raises(NumericalError):
            total_loss(1.0, float("inf"), 0.0)


class TestPerceptionLoss:
    """Test the two-scale perceptual loss."""

    def test_identical_images(self):
        """L_p is zero when output equals target."""
        image = torch.rand(2, 3, 32, 24)
        assert float(perception_loss(image, image.clone(), PerceptualExtractor())) == 0.0

    def test_identity_layer_constants(self):
        """With one identity layer, constant images at 0.7 and 0.2 give 0.5."""
        extractor = PerceptualExtractor(layers=[nn.Identity()])
        a = torch.full((1, 3, 8, 8), 0.7, dtype=torch.float64)
        b = torch.full((1, 3, 8, 8), 0.2, dtype=torch.float64)
        assert abs(float(perception_loss(a, b, extractor)) - 0.5) < 1e-6

    def test_identity_layer_random_oracle(self):
        """With one identity layer, L_p averages the full-scale and 2x2-block-mean L1 distances."""
        extractor = PerceptualExtractor(layers=[nn.Identity()])
        generator = torch.Generator().manual_seed(0)
        a = torch.rand(2, 3, 16, 12, generator=generator, dtype=torch.float64)
        b = torch.rand(2, 3, 16, 12, generator=generator, dtype=torch.float64)
        full = (a - b).abs().mean()
        half = (F.avg_pool2d(a, 2) - F.avg_pool2d(b, 2)).abs().mean()
        expected = float((full + half) / 2)
        assert_close(float(perception_loss(a, b, extractor)), expected, 1e-6, "L_p")

    def test_symmetric(self):
        """L_p(a, b) equals L_p(b, a)."""
        extractor = PerceptualExtractor()
        a, b = torch.rand(2, 3, 32, 24), torch.rand(2, 3, 32, 24)
        forward, backward = perception_loss(a, b, extractor), perception_loss(b, a, extractor)
        assert float(forward) == pytest.approx(float(backward), abs=1e-7)

    def test_gradient_matches_finite_differences(self):
        """The gradient of L_p with respect to the output agrees with central differences."""
        extractor = PerceptualExtractor().double()
        generator = torch.Generator().manual_seed(3)
        target = torch.rand(1, 3, 16, 12, generator=generator, dtype=torch.float64)
        output = torch.rand(1, 3, 16, 12, generator=generator, dtype=torch.float64).requires_grad_(True)
        tensors = {"output": output}
        assert_gradients_match(
            lambda: perception_loss(output, target, extractor), tensors, random_coordinates(tensors, 10), tol=1e-3
        )

    def test_odd_size(self):
        """Odd image sizes raise ShapeError."""
        with pytest.raises(ShapeError):
            perception_loss(torch.rand(1, 3, 9, 8), torch.rand(1, 3, 9, 8), PerceptualExtractor())

    def test_shape_mismatch(self):
        """Different shapes raise ShapeError."""
        with pytest.raises(ShapeError):
            perception_loss(torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 6), PerceptualExtractor())

    def test_extractor_is_fixed(self):
        """The extractor has no trainable parameters and is seeded."""
        a, b = PerceptualExtractor(), PerceptualExtractor()
        assert not any(p.requires_grad for p in a.parameters())
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_gradient_reaches_output(self):
        """L_p is differentiable with respect to the generated image."""
        output = torch.rand(1, 3, 16, 16, requires_grad=True)
        perception_loss(output, torch.rand(1, 3, 16, 16), PerceptualExtractor()).backward()
        assert output.grad is not None and output.grad.abs().sum() > 0


class TestSyncScorer:
    """Test the lip-sync scorer and the sync loss."""

    def test_shapes(self):
        """Embeddings, logits and confidences have one row per pair."""
        scorer = SyncScorer(32, 9)
        audio = torch.randn(4, 9, 29)
        frames = torch.rand(4, 3, 64, 48)
        assert scorer.embed_audio(audio).shape == (4, 32)
        assert scorer.embed_visual(frames).shape == (4, 32)
        assert scorer(audio, frames).shape == (4,)
        confidence = scorer.confidence(audio, frames)
        assert confidence.min() >= 0 and confidence.max() <= 1

    def test_freeze(self):
        """freeze() removes every trainable parameter."""
        scorer = SyncScorer(32, 9)
        assert not scorer.frozen
        assert scorer.freeze().frozen
        assert not scorer.training

    def test_sync_loss_requires_frozen_scorer(self):
        """An unfrozen scorer raises ContractError."""
        with pytest.raises(ContractError):
            sync_loss(torch.randn(2, 9, 29), torch.rand(2, 3, 64, 48), SyncScorer(32, 9))

    def test_sync_loss_range(self):
        """With a frozen scorer L_sync lies in [0, 4] and reaches the image."""
        scorer = SyncScorer(32, 9).freeze()
        output = torch.rand(2, 3, 64, 48, requires_grad=True)
        loss = sync_loss(torch.randn(2, 9, 29), output, scorer)
        assert 0.0 <= float(loss) <= 4.0
        loss.backward()
        assert output.grad is not None

    def test_sync_loss_arithmetic(self):
        """Confidences of 0.5 and 1.0 give L_sync = 0.125."""
        output = torch.rand(2, 3, 8, 8)
        assert float(sync_loss(torch.randn(2, 9, 29), output, FixedConfidenceScorer())) == pytest.approx(0.125)

    def test_visual_tower_sees_only_the_mouth_box(self):
        """Pixels outside the mouth box do not change the visual embedding."""
        scorer = SyncScorer(16, 9, hidden=16).freeze()
        frames = torch.rand(2, 3, 64, 48)
        boxes = torch.tensor([[10, 30, 40, 60], [6, 34, 42, 62]])
        altered = frames.clone()
        altered[:, :, :28] = 0.0
        torch.testing.assert_close(scorer.embed_visual(frames, boxes), scorer.embed_visual(altered, boxes))
        assert not torch.allclose(scorer.embed_visual(frames), scorer.embed_visual(frames, boxes))


class TestCropRegions:
    """Test the differentiable mouth crops."""

    def test_default_is_lower_half(self):
        """Without boxes rows H//2 onward are resized to half the image size."""
        images = torch.rand(2, 3, 64, 48)
        expected = F.interpolate(images[:, :, 32:], size=(32, 24), mode="bilinear", align_corners=False)
        torch.testing.assert_close(crop_regions(images), expected)

    def test_half_size_box_is_copied(self):
        """A box of exactly half the image size is cut out unchanged."""
        images = torch.rand(2, 3, 16, 12)
        boxes = torch.tensor([[2, 4, 8, 12], [6, 8, 12, 16]])
        crops = crop_regions(images, boxes)
        assert crops.shape == (2, 3, 8, 6)
        torch.testing.assert_close(crops[0], images[0, :, 4:12, 2:8])
        torch.testing.assert_close(crops[1], images[1, :, 8:16, 6:12])

    def test_gradient_stays_inside_the_box(self):
        """Only pixels inside the box receive gradient."""
        images = torch.rand(1, 3, 16, 12, requires_grad=True)
        crop_regions(images, torch.tensor([[2, 4, 8, 12]])).sum().backward()
        inside = torch.zeros(16, 12, dtype=torch.bool)
        inside[4:12, 2:8] = True
        assert images.grad[0, :, ~inside].abs().sum() == 0
        assert images.grad[0, :, inside].abs().min() > 0

    def test_bad_shapes(self):
        """Non-4-D images or mis-sized boxes raise ShapeError."""
        with pytest.raises(ShapeError):
            crop_regions(torch.rand(3, 16, 12))
        with pytest.raises(ShapeError):
            crop_regions(torch.rand(2, 3, 16, 12), torch.zeros(3, 4, dtype=torch.long))
