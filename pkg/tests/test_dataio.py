"""Tests for manifests, frame I/O, reference selection and datasets."""

import json

import numpy as np
import pytest
import torch

from facedub.config import AUDIO_FEATURE_DIM, TrainConfig
from facedub.dataio import (
    ClipManifest,
    DubbingDataset,
    collate_samples,
    find_manifests,
    load_sample,
    read_frame,
    select_references,
    write_frame,
)
from facedub.errors import FormatError, InsufficientFrames, InvalidParameter
from facedub.geometry import crop_region, mask_bounds


class TestFrameFiles:
    """Test PNG frame I/O."""

    def test_uint8_round_trip(self, temp_directory):
        """An 8-bit frame written and read back keeps its pixel values."""
        pixels = np.random.default_rng(0).integers(0, 256, size=(12, 8, 3), dtype=np.uint8)
        write_frame(temp_directory / "f.png", pixels)
        loaded = read_frame(temp_directory / "f.png")
        assert loaded.dtype == np.float32
        np.testing.assert_array_equal(np.rint(loaded * 255).astype(np.uint8), pixels)

    def test_missing_frame(self, temp_directory):
        """An unreadable frame raises FormatError."""
        with pytest.raises(FormatError):
            read_frame(temp_directory / "missing.png")


class TestManifests:
    """Test clip manifests on the rendered dataset."""

    def test_find_manifests(self, synthetic_manifests):
        """All clips are found in id order and validate."""
        assert [m.clip_id for m in synthetic_manifests] == ["clip_000", "clip_001", "clip_002", "clip_003"]
        for manifest in synthetic_manifests:
            manifest.validate()
            assert manifest.frame_path(0).exists()
            assert manifest.landmark_path(manifest.frame_count - 1).exists()

    def test_count_mismatch(self, synthetic_manifests, temp_directory):
        """A manifest whose frame count disagrees with the files fails validation."""
        data = synthetic_manifests[0].to_dict()
        data["frame_count"] += 1
        manifest = ClipManifest(root=synthetic_manifests[0].root, **data)
        with pytest.raises(FormatError):
            manifest.validate()

    def test_malformed_manifest(self, temp_directory):
        """A document with missing keys raises FormatError."""
        (temp_directory / "clip").mkdir()
        path = temp_directory / "clip" / "manifest.json"
        path.write_text(json.dumps({"clip_id": "x"}))
        with pytest.raises(FormatError):
            ClipManifest.load(path)

    def test_empty_data_dir(self, temp_directory):
        """A directory without manifests raises FormatError."""
        with pytest.raises(FormatError):
            find_manifests(temp_directory)


class TestReferenceSelection:
    """Test reference frame sampling."""

    def test_distinct_and_far_from_target(self):
        """Five references on a 200-frame clip are distinct and at least 10 frames away."""
        rng = np.random.default_rng(0)
        for target in (0, 57, 199):
            refs = select_references(range(200), target, 5, 10, rng)
            assert len(set(refs)) == 5
            assert all(abs(r - target) >= 10 for r in refs)

    def test_pure_function_of_seed(self):
        """The same seed draws the same references."""
        a = select_references(range(200), 50, 5, 10, np.random.default_rng([3, 50]))
        b = select_references(range(200), 50, 5, 10, np.random.default_rng([3, 50]))
        assert a == b

    def test_insufficient_frames(self):
        """A clip too short for the gap raises InsufficientFrames."""
        with pytest.raises(InsufficientFrames):
            select_references(range(15), 7, 5, 10, np.random.default_rng(0))


class TestSamples:
    """Test sample construction from loaded clips."""

    def test_sample_layout(self, synthetic_clips):
        """Shapes, masking and reference constraints of one sample."""
        sample = synthetic_clips[0].sample(30, 5, [0, 30], gap=10, window=9)
        assert sample.source_frame.shape == (3, 64, 48)
        assert sample.references.shape == (5, 3, 64, 48)
        assert sample.mouths.shape == (5, 3, 32, 24)
        assert sample.audio.shape == (9, AUDIO_FEATURE_DIM)
        assert sample.mask.shape == (1, 64, 48)
        assert torch.all(sample.masked_source[:, sample.mask[0] == 1] == 0)
        assert torch.equal(sample.masked_source[:, sample.mask[0] == 0], sample.source_frame[:, sample.mask[0] == 0])
        assert torch.equal(sample.target, sample.source_frame)
        assert all(abs(i - 30) >= 10 for i in sample.reference_indices)
        box = mask_bounds(synthetic_clips[0].masks[30])
        assert sample.mouth_box.tolist() == [box.x0, box.y0, box.x1, box.y1]

    def test_mouth_crops_keep_only_lower_face(self, synthetic_clips):
        """Mouth crops are the masked mouth box of each reference, resized to half size."""
        clip = synthetic_clips[1]
        sample = clip.sample(5, 5, [0, 5], gap=10)
        for k, index in enumerate(sample.reference_indices):
            box = clip.mouth_boxes[index]
            masked = clip.frames[index] * clip.masks[index][:, :, None]
            expected = crop_region(masked, box, 32, 24).transpose(2, 0, 1)
            np.testing.assert_allclose(sample.mouths[k].numpy(), expected, atol=1e-6)
            assert clip.masks[index][box.slices()].sum() == clip.masks[index].sum()

    def test_segment_restricts_references(self, synthetic_clips):
        """References of a second-half sample come from the second half."""
        clip = synthetic_clips[0]
        second = clip.segment("second")
        sample = clip.sample(second[-1], 5, [0, 1], gap=10, segment="second")
        assert all(i in second for i in sample.reference_indices)
        with pytest.raises(InvalidParameter):
            clip.sample(0, 5, [0, 1], segment="second")
        with pytest.raises(InvalidParameter):
            clip.segment("middle")

    def test_load_sample_from_disk(self, synthetic_manifests):
        """load_sample matches the in-memory path and validates the target index."""
        sample = load_sample(synthetic_manifests[0], 40, 5, [1, 40], height=64, width=48)
        assert sample.target_index == 40
        assert len(sample.reference_indices) == 5
        with pytest.raises(InvalidParameter):
            load_sample(synthetic_manifests[0], 1000, 5, 0, height=64, width=48)

    def test_collate(self, synthetic_clips):
        """Collated samples stack along a new batch axis."""
        samples = [synthetic_clips[0].sample(t, 5, [0, t]) for t in (20, 40)]
        batch = collate_samples(samples)
        assert batch["masked_source"].shape == (2, 3, 64, 48)
        assert batch["references"].shape == (2, 5, 3, 64, 48)
        assert batch["audio"].shape == (2, 9, AUDIO_FEATURE_DIM)
        assert batch["mouths"].shape == (2, 5, 3, 32, 24)
        assert batch["mouth_box"].shape == (2, 4)


class TestDubbingDataset:
    """Test the training dataset."""

    def test_batches_are_pure_functions_of_step(self, synthetic_clips):
        """The batch of a step is identical across calls and datasets."""
        config = TrainConfig.tiny(batch_size=3)
        a = DubbingDataset(synthetic_clips, config).batch_for_step(17)
        b = DubbingDataset(synthetic_clips, config).batch_for_step(17)
        for key in ("masked_source", "references", "audio", "target"):
            assert torch.equal(a[key], b[key])
        assert a["target"].shape == (3, 3, 64, 48)

    def test_items(self, synthetic_clips):
        """Every frame with enough references is an item."""
        dataset = DubbingDataset(synthetic_clips, TrainConfig.tiny())
        assert len(dataset) == sum(len(c) for c in synthetic_clips)
        item = dataset[0]
        assert item["masked_source"].shape == (3, 64, 48)

    def test_too_short_for_references(self, synthetic_clips):
        """A gap no frame can satisfy leaves the dataset empty and raises InsufficientFrames."""
        with pytest.raises(InsufficientFrames):
            DubbingDataset(synthetic_clips, TrainConfig.tiny(reference_gap=59))
