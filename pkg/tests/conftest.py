"""Pytest configuration and shared fixtures."""

import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest
import torch

from facedub.config import NUM_LANDMARKS, TrainConfig
from facedub.dataio import ClipData, find_manifests
from facedub.geometry import LandmarkSet
from facedub.synthetic import FaceIdentity, face_points, synth_generate, to_pixels
from facedub.train import pretrain_sync

SYNTH_SEED = 0
SYNTH_CLIPS = 4
SYNTH_FRAMES = 60
SYNTH_HEIGHT = 96
SYNTH_WIDTH = 72


@pytest.fixture
def temp_directory():
    """Provide a temporary directory for file operations."""
    temp_dir = Path(tempfile.mkdtemp(prefix="facedub_test_"))
    yield temp_dir
    shutil.rmtree(temp_dir)


@pytest.fixture
def tiny_config():
    """64x48 configuration with D=64 and two AVAUs."""
    return TrainConfig.tiny(batch_size=2, checkpoint_every=5, log_every=5)


@pytest.fixture(scope="session")
def synthetic_dir(tmp_path_factory):
    """A small synthetic dataset rendered once per session."""
    root = tmp_path_factory.mktemp("synthetic")
    synth_generate(SYNTH_SEED, SYNTH_CLIPS, SYNTH_FRAMES, SYNTH_HEIGHT, SYNTH_WIDTH, root)
    return root


@pytest.fixture(scope="session")
def synthetic_manifests(synthetic_dir):
    """Manifests of the session dataset, sorted by clip id."""
    return find_manifests(synthetic_dir)


@pytest.fixture(scope="session")
def synthetic_clips(synthetic_manifests):
    """The session dataset loaded at 64x48 crop resolution."""
    config = TrainConfig.tiny()
    return [ClipData.load(m, config.height, config.width, config.crop_margin) for m in synthetic_manifests]


@pytest.fixture(scope="session")
def pretrained_sync(synthetic_clips):
    """Sync pretraining on the session dataset at the tiny preset, run once (slow)."""
    return pretrain_sync(synthetic_clips, TrainConfig.tiny())


@pytest.fixture
def face_landmarks():
    """Analytic landmarks of one rendered synthetic face at 96x72."""
    identity = FaceIdentity.sample(np.random.default_rng(3))
    points = to_pixels(identity, face_points(identity, 0.5, 0.0), SYNTH_HEIGHT, SYNTH_WIDTH)
    assert points.shape == (NUM_LANDMARKS, 2)
    return LandmarkSet.from_points(points, SYNTH_WIDTH, SYNTH_HEIGHT)


@pytest.fixture(autouse=True)
def seed_everything():
    """Seed torch before every test so random initialisations are reproducible."""
    torch.manual_seed(0)


def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line("markers", "slow: marks training runs (may take minutes on CPU)")
    config.addinivalue_line("markers", "integration: marks CLI and multi-module tests")
    config.addinivalue_line("markers", "unit: marks tests as unit tests")


def pytest_collection_modifyitems(config, items):
    """Mark tests that use the rendered dataset as integration tests."""
    for item in items:
        if any(fixture in item.fixturenames for fixture in ["synthetic_dir", "synthetic_clips", "synthetic_manifests"]):
            item.add_marker(pytest.mark.integration)


# Custom assertion helpers


def assert_close(actual, expected, tol, what="value"):
    """Assert |actual - expected| <= tol with a readable message."""
    diff = float(np.max(np.abs(np.asarray(actual, dtype=np.float64) - np.asarray(expected, dtype=np.float64))))
    assert diff <= tol, f"{what}: max abs difference {diff:.3e} exceeds {tol:.1e}"


def central_difference(fn, tensor, index, eps=1e-6):
    """Central finite difference of the scalar ``fn()`` with respect to ``tensor[index]``."""
    with torch.no_grad():
        original = tensor[index].item()
        tensor[index] = original + eps
        plus = float(fn())
        tensor[index] = original - eps
        minus = float(fn())
        tensor[index] = original
    return (plus - minus) / (2 * eps)


def relative_error(a, b, floor=1e-3):
    """|a - b| over max(|a|, |b|, floor); the floor keeps near-zero gradients from dominating."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def assert_gradients_match(fn, tensors, coordinates, tol):
    """
    Compare autograd against central differences of the scalar ``fn()``.

    ``tensors`` maps names to float64 leaf tensors with requires_grad set;
    ``coordinates`` lists (name, index) pairs to check.
    """
    for tensor in tensors.values():
        tensor.grad = None
    fn().backward()
    for name, index in coordinates:
        analytic = tensors[name].grad[index].item()
        numeric = central_difference(fn, tensors[name], index)
        error = relative_error(analytic, numeric)
        assert error < tol, f"{name}{tuple(index)}: autograd {analytic:.6e}, finite difference {numeric:.6e}"


def random_coordinates(tensors, count, seed=0):
    """``count`` (name, index) pairs drawn uniformly over the named tensors."""
    rng = np.random.default_rng(seed)
    names = sorted(tensors)
    picks = []
    for _ in range(count):
        name = names[int(rng.integers(len(names)))]
        index = tuple(int(rng.integers(size)) for size in tensors[name].shape)
        picks.append((name, index))
    return picks
