"""
FaceDub Test Suite

Test Categories:
- Geometry, audio and config: hulls, masks, crops, AUDF files, configuration
- Data: manifests, reference selection, the synthetic talking-face renderer
- Networks: alignment, warping, inpainting and the assembled generator
- Objectives and metrics: loss oracles, SSIM/PSNR/perceptual/sync scores
- Training and inference: training loop, checkpoints, dubbing, the CLI

Usage:
    # Run all tests
    pytest

    # Skip long training runs
    pytest -m "not slow"

    # Run with coverage
    pytest --cov=facedub
"""

__version__ = "0.1.0"
__author__ = "FaceDub developers"
