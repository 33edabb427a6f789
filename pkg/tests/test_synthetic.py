"""Tests for the procedural talking-face dataset."""

import json

import numpy as np
import pytest

from facedub.audio import read_audio_features
from facedub.config import AUDIO_FEATURE_DIM, LOWER_HALF_INDICES, NOSE_TIP_INDEX, OUTER_LIP_INDICES
from facedub.errors import InvalidParameter
from facedub.geometry import LandmarkSet, load_landmarks
from tests.conftest import SYNTH_SEED
from facedub.synthetic import (
    DERIVATIVE_SCALE,
    FaceIdentity,
    audio_projection,
    load_opening,
    mouth_opening_signal,
    opening_signal,
    render_face,
    synth_generate,
)


class TestRenderer:
    """Test single-frame rendering."""

    def test_frame_and_landmarks(self):
        """A rendered frame has the requested size and in-frame landmarks."""
        identity = FaceIdentity.sample(np.random.default_rng(0))
        image, points = render_face(identity, 0.3, 0.0, 96, 72)
        assert image.shape == (96, 72, 3)
        assert image.dtype == np.uint8
        assert points.shape == (468, 2)
        assert points[:, 0].min() >= 0 and points[:, 0].max() < 72
        assert points[:, 1].min() >= 0 and points[:, 1].max() < 96

    def test_open_mouth_is_darker(self):
        """Opening the mouth darkens the mouth region."""
        identity = FaceIdentity.sample(np.random.default_rng(1))
        closed, points = render_face(identity, 0.0, 0.0, 96, 72)
        opened, _ = render_face(identity, 1.0, 0.0, 96, 72)
        lm = LandmarkSet.from_points(points, 72, 96)
        signal = mouth_opening_signal([closed, opened], [lm, lm])
        assert signal[1] > signal[0]

    def test_lips_move_with_opening(self):
        """Outer-lip landmarks spread vertically as the mouth opens."""
        identity = FaceIdentity.sample(np.random.default_rng(2))
        _, closed = render_face(identity, 0.0, 0.0, 96, 72)
        _, opened = render_face(identity, 1.0, 0.0, 96, 72)
        lips = list(OUTER_LIP_INDICES)
        assert np.ptp(opened[lips, 1]) > np.ptp(closed[lips, 1])

    def test_opening_signal_range(self):
        """o(t) spans [0, 1]."""
        signal = opening_signal(np.random.default_rng(3), 200)
        assert signal.min() == pytest.approx(0.0)
        assert signal.max() == pytest.approx(1.0)


class TestSynthGenerate:
    """Test dataset generation."""

    def test_layout(self, synthetic_manifests):
        """Each clip has frames, landmarks, audio and signals on disk."""
        manifest = synthetic_manifests[0]
        audio = read_audio_features(manifest.resolve(manifest.audio_path))
        assert audio.shape == (manifest.frame_count, AUDIO_FEATURE_DIM)
        assert (manifest.height, manifest.width) == (96, 72)
        signals = json.loads(manifest.resolve(manifest.signals_path).read_text())
        assert len(signals["mouth_opening"]) == manifest.frame_count

    def test_lower_half_landmarks_below_nose(self, synthetic_manifests):
        """Every stored frame keeps the lower-half landmarks at or below the nose tip."""
        manifest = synthetic_manifests[2]
        for t in range(0, manifest.frame_count, 7):
            lm = load_landmarks(manifest.landmark_path(t), manifest.width, manifest.height)
            assert lm.subset(LOWER_HALF_INDICES)[:, 1].min() >= lm.points[NOSE_TIP_INDEX, 1] - 1e-3

    def test_identities_differ(self, synthetic_manifests):
        """Clips get different identities."""
        identities = [
            json.dumps(json.loads(m.resolve(m.signals_path).read_text())["identity"], sort_keys=True)
            for m in synthetic_manifests
        ]
        assert len(set(identities)) == len(identities)

    def test_deterministic(self, temp_directory):
        """Two runs with one seed write byte-identical files."""
        synth_generate(5, 1, 20, 48, 36, temp_directory / "a")
        synth_generate(5, 1, 20, 48, 36, temp_directory / "b")
        for name in ("frames/000007.png", "landmarks/000007.json", "audio.audf", "signals.json"):
            a = (temp_directory / "a" / "clip_000" / name).read_bytes()
            b = (temp_directory / "b" / "clip_000" / name).read_bytes()
            assert a == b, name

    def test_invalid_arguments(self, temp_directory):
        """Sizes not divisible by 4 and clips shorter than 2T are rejected."""
        with pytest.raises(InvalidParameter):
            synth_generate(0, 1, 20, 50, 36, temp_directory)
        with pytest.raises(InvalidParameter):
            synth_generate(0, 1, 10, 48, 36, temp_directory)
        with pytest.raises(InvalidParameter):
            synth_generate(0, 0, 20, 48, 36, temp_directory)

    def test_projection_depends_on_seed(self):
        """W_a is fixed by the seed."""
        assert np.array_equal(audio_projection(0), audio_projection(0))
        assert not np.array_equal(audio_projection(0), audio_projection(1))


class TestSignals:
    """Test that audio and pixels carry the mouth opening."""

    def test_audio_linearly_decodes_opening(self, synthetic_manifests):
        """A least-squares readout of the audio features recovers o(t)."""
        manifest = synthetic_manifests[0]
        audio = read_audio_features(manifest.resolve(manifest.audio_path)).astype(np.float64)
        opening = load_opening(manifest)
        design = np.hstack([audio, np.ones((len(audio), 1))])
        coef, *_ = np.linalg.lstsq(design, opening, rcond=None)
        assert np.corrcoef(design @ coef, opening)[0, 1] > 0.99

    def test_audio_is_a_linear_embedding(self, synthetic_manifests):
        """Audio features are W_a [o, o'] plus zero-mean noise of std 0.01, with no intercept."""
        for manifest in synthetic_manifests:
            audio = read_audio_features(manifest.resolve(manifest.audio_path)).astype(np.float64)
            opening = load_opening(manifest)
            signal = np.stack([opening, np.gradient(opening) * DERIVATIVE_SCALE], axis=1)
            residual = audio - signal @ audio_projection(SYNTH_SEED).T
            assert abs(residual.mean()) < 0.002
            assert 0.008 < residual.std() < 0.012

            coef, *_ = np.linalg.lstsq(audio, opening, rcond=None)
            r_squared = 1 - np.sum((audio @ coef - opening) ** 2) / np.sum((opening - opening.mean()) ** 2)
            assert r_squared > 0.9

    def test_mouth_darkness_tracks_opening(self, synthetic_clips):
        """The mouth-darkness signal of the loaded crops correlates with o(t)."""
        clip = synthetic_clips[3]
        signal = mouth_opening_signal(clip.frames, clip.landmarks)
        assert np.corrcoef(signal, load_opening(clip.manifest))[0, 1] > 0.8
