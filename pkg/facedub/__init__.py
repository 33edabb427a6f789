"""
FaceDub: identity-preserving lip-sync video dubbing.

The lower half of each face crop is masked and regenerated from driving audio and a
handful of reference frames of the same person:

- an alignment module fuses audio and reference mouth crops into one conditioning vector
- a warping module moves reference features onto the source with a dense flow field
- a SPADE decoder inpaints the masked region, which is then pasted back into the frame

The package also ships a procedural synthetic dataset, the training harness (GAN
loop, sync-scorer pretraining, identity fine-tuning, ablations), evaluation metrics
and a command line interface.
"""

__version__ = "0.1.0"
__author__ = "FaceDub developers"

try:
    from .checkpoint import ModelState
    from .config import TrainConfig
    from .errors import FaceDubError, NumericalError, TrainingDivergence, ValidationError
    from .generator import DubbingGenerator, generate_frame
    from .inference import EvaluationRow, InferenceResult, evaluate, infer
    from .synthetic import synth_generate
    from .train import DubbingTrainer, TrainingResult, finetune, pretrain_sync, train_loop

    __all__ = [
        "DubbingGenerator",
        "DubbingTrainer",
        "EvaluationRow",
        "FaceDubError",
        "InferenceResult",
        "ModelState",
        "NumericalError",
        "TrainConfig",
        "TrainingDivergence",
        "TrainingResult",
        "ValidationError",
        "evaluate",
        "finetune",
        "generate_frame",
        "infer",
        "pretrain_sync",
        "synth_generate",
        "train_loop",
    ]
except ImportError:
    # Handle import errors gracefully for documentation generation
    __all__ = []
