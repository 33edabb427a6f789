"""
Training harness: the alternating GAN loop, sync-scorer pretraining and identity
fine-tuning.
"""

import csv
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TextIO, Union

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from .audio import audio_window
from .checkpoint import ModelState
from .config import ABLATIONS, LOSS_CSV_COLUMNS, TrainConfig
from .dataio import ClipData, DubbingDataset
from .errors import InsufficientFrames, InvalidParameter, NumericalError, TrainingDivergence
from .inference import EvaluationRow, evaluate, write_table
from .losses import PerceptualExtractor, SyncScorer, gan_d_loss, gan_g_loss, perception_loss, sync_loss, total_loss

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SYNC_BATCH_SIZE = 32
SYNC_LEARNING_RATE = 1e-3
SYNC_EVAL_EVERY = 100
SYNC_HELD_OUT_PAIRS = 512
SYNC_TRAIN_FRACTION = 0.8


def set_determinism(seed: int) -> None:
    """Seed torch and request deterministic kernels."""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


class TrainingResult:
    """Outcome of a training run."""

    def __init__(self, state: ModelState, history: List[Dict[str, float]], loss_csv: Optional[Path], checkpoints: List[Path]):
        self.state = state
        self.history = history
        self.loss_csv = loss_csv
        self.checkpoints = checkpoints

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary representation."""
        return {
            "step": self.state.step,
            "loss_csv": str(self.loss_csv) if self.loss_csv else None,
            "checkpoints": [str(p) for p in self.checkpoints],
            "final": self.history[-1] if self.history else None,
        }

    def __repr__(self):
        final = self.history[-1]["L"] if self.history else float("nan")
        return f"TrainingResult(step={self.state.step}, L={final:.4f}, checkpoints={len(self.checkpoints)})"


class SyncPretrainResult:
    """
    A pretrained sync scorer and its held-out accuracy.

    The scorer is frozen unless ``control`` is set: a shuffled-label control run only
    reports its accuracy and its scorer is never used as a loss.
    """

    def __init__(
        self,
        scorer: SyncScorer,
        accuracy: float,
        steps: int,
        history: List[Dict[str, float]],
        control: bool = False,
    ):
        self.scorer = scorer
        self.accuracy = accuracy
        self.steps = steps
        self.history = history
        self.control = control

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary representation."""
        return {"accuracy": self.accuracy, "steps": self.steps, "control": self.control, "history": self.history}

    def __repr__(self):
        kind = ", control" if self.control else ""
        return f"SyncPretrainResult(accuracy={self.accuracy:.3f}, steps={self.steps}{kind})"


def _format(value: float) -> str:
    return f"{value:.9g}"


class DubbingTrainer:
    """
    Alternating least-squares GAN training of the dubbing generator.

    Each step draws the batch for the current global step, updates the discriminator
    on L_D with the generated frames detached, then updates the generator on
    L = lambda_p L_p + lambda_sync L_sync + L_G. The lip-sync term is off until the
    state holds a frozen sync scorer and ``sync_warmup_steps`` steps have run.

    Use as a context manager so the loss CSV is closed:

        with DubbingTrainer(config, dataset, out_dir="runs/a") as trainer:
            result = trainer.run(300)
    """

    def __init__(
        self,
        config: TrainConfig,
        dataset: DubbingDataset,
        state: Optional[ModelState] = None,
        scorer: Optional[SyncScorer] = None,
        out_dir: Optional[PathLike] = None,
        extractor: Optional[PerceptualExtractor] = None,
    ):
        self.config = config
        self.dataset = dataset
        if state is None:
            set_determinism(config.seed)
            state = ModelState.create(config, scorer=scorer)
        elif scorer is not None:
            state.scorer = scorer
        self.state = state
        self.extractor = extractor or PerceptualExtractor()
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.last_checkpoint: Optional[Path] = None
        self.checkpoints: List[Path] = []
        self.history: List[Dict[str, float]] = []
        self._csv_file: Optional[TextIO] = None
        self._csv_writer: Any = None

    def __enter__(self):
        """Context manager entry."""
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Context manager exit - close the loss log."""
        self.close()

    def close(self) -> None:
        if self._csv_file is not None:
            self._csv_file.close()
            self._csv_file = None
            self._csv_writer = None

    @property
    def loss_csv(self) -> Optional[Path]:
        return self.out_dir / "losses.csv" if self.out_dir else None

    def _log_row(self, row: Dict[str, float]) -> None:
        if self.out_dir is None:
            return
        if self._csv_file is None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.config.to_json(self.out_dir / "config.json")
            path = self.out_dir / "losses.csv"
            resume = self.state.step > 1 and path.exists()
            self._csv_file = open(path, "a" if resume else "w", newline="")
            self._csv_writer = csv.writer(self._csv_file)
            if not resume:
                self._csv_writer.writerow(LOSS_CSV_COLUMNS)
        self._csv_writer.writerow([row["step"]] + [_format(row[c]) for c in LOSS_CSV_COLUMNS[1:]])
        self._csv_file.flush()

    def lambda_sync_at(self, step: int) -> float:
        """Effective lip-sync weight at a global step."""
        scorer = self.state.scorer
        if scorer is None or not scorer.frozen or step < self.config.sync_warmup_steps:
            return 0.0
        return self.config.lambda_sync

    def save_checkpoint(self, path: Optional[PathLike] = None) -> Path:
        if path is None:
            if self.out_dir is None:
                raise InvalidParameter("No output directory configured for checkpoints")
            path = self.out_dir / "checkpoints" / f"step_{self.state.step:06d}.ckpt"
        saved = self.state.save(path)
        self.last_checkpoint = saved
        self.checkpoints.append(saved)
        return saved

    def train_step(self) -> Dict[str, float]:
        """
        Run one discriminator update and one generator update.

        Returns:
            the loss row of this step

        Raises:
            NumericalError: a loss is not finite (carries the last good checkpoint)
        """
        state = self.state
        step = state.step
        batch = self.dataset.batch_for_step(step)
        generator, discriminator = state.generator, state.discriminator
        generator.train()

        fake = generator.generate(batch).image
        real = batch["target"]

        discriminator.requires_grad_(True)
        l_d = gan_d_loss(discriminator, real, fake)
        if not torch.isfinite(l_d):
            raise NumericalError(f"L_D is not finite at step {step}", checkpoint_path=self._last_good())
        state.d_optimizer.zero_grad(set_to_none=True)
        l_d.backward()
        state.d_optimizer.step()

        discriminator.requires_grad_(False)
        l_g = gan_g_loss(discriminator, fake)
        l_p = perception_loss(fake, real, self.extractor)
        lambda_sync = self.lambda_sync_at(step)
        if lambda_sync > 0 and state.scorer is not None:
            l_sync = sync_loss(batch["audio"], fake, state.scorer, batch["mouth_box"])
        else:
            l_sync = fake.new_zeros(())
        if step == self.config.sync_warmup_steps and lambda_sync > 0:
            logger.info(f"Lip-sync loss enabled at step {step} (lambda_sync={lambda_sync})")
        try:
            loss = total_loss(l_p, l_sync, l_g, self.config.lambda_p, lambda_sync)
        except NumericalError as e:
            raise NumericalError(f"Step {step}: {e}", checkpoint_path=self._last_good()) from e

        state.g_optimizer.zero_grad(set_to_none=True)
        loss.backward()
        state.g_optimizer.step()
        discriminator.requires_grad_(True)

        state.step += 1
        row = {
            "step": state.step,
            "L_p": float(l_p),
            "L_G": float(l_g),
            "L_D": float(l_d),
            "L_sync": float(l_sync),
            "L": float(loss),
        }
        self.history.append(row)
        self._log_row(row)
        return row

    def _last_good(self) -> Optional[str]:
        return str(self.last_checkpoint) if self.last_checkpoint else None

    def run(self, steps: Optional[int] = None) -> TrainingResult:
        """
        Train for ``steps`` steps (default: up to ``config.total_steps``).

        Checkpoints are written every ``checkpoint_every`` global steps and at the end
        when an output directory is set.
        """
        if steps is None:
            steps = max(0, self.config.total_steps - self.state.step)
        if self.state.scorer is not None and self.state.step < self.config.sync_warmup_steps:
            logger.warning(f"Lip-sync loss disabled for the first {self.config.sync_warmup_steps} steps (warmup)")

        for _ in tqdm(range(steps), desc="train", disable=None):
            row = self.train_step()
            step = self.state.step
            if step % self.config.log_every == 0:
                logger.info(
                    f"step {step}: L={row['L']:.4f} L_p={row['L_p']:.4f} L_G={row['L_G']:.4f} "
                    f"L_D={row['L_D']:.4f} L_sync={row['L_sync']:.4f}"
                )
            if self.out_dir is not None and step % self.config.checkpoint_every == 0:
                self.save_checkpoint()
        if self.out_dir is not None and steps and (not self.checkpoints or self.checkpoints[-1].stem != f"step_{self.state.step:06d}"):
            self.save_checkpoint()
        return TrainingResult(self.state, list(self.history), self.loss_csv, list(self.checkpoints))


def train_loop(
    config: TrainConfig,
    dataset: DubbingDataset,
    out_dir: Optional[PathLike] = None,
    scorer: Optional[SyncScorer] = None,
    steps: Optional[int] = None,
    state: Optional[ModelState] = None,
) -> TrainingResult:
    """Train from scratch (or from ``state``) and return the result."""
    with DubbingTrainer(config, dataset, state=state, scorer=scorer, out_dir=out_dir) as trainer:
        return trainer.run(steps)


def _clips_of(data: Union[DubbingDataset, Sequence[ClipData]]) -> List[ClipData]:
    return list(data.clips) if isinstance(data, DubbingDataset) else list(data)


def _split(clip: ClipData, held_out: bool) -> range:
    cut = int(len(clip) * SYNC_TRAIN_FRACTION)
    return range(cut, len(clip)) if held_out else range(0, cut)


def _sync_pairs(clips: List[ClipData], config: TrainConfig, rng: np.random.Generator, count: int, held_out: bool):
    windows, frames, boxes, labels = [], [], [], []
    for _ in range(count):
        clip = clips[int(rng.integers(len(clips)))]
        span = _split(clip, held_out)
        t = int(rng.choice(span))
        positive = bool(rng.random() < 0.5)
        center = t
        if not positive:
            shifted = [s for s in span if abs(s - t) >= config.sync_negative_shift]
            if not shifted:
                raise InsufficientFrames(f"Clip {clip.manifest.clip_id} too short for shift {config.sync_negative_shift}")
            center = int(rng.choice(shifted))
        windows.append(audio_window(clip.audio, center, config.audio_window).features)
        frames.append(clip.frames[t].transpose(2, 0, 1))
        boxes.append(clip.mouth_box_tensor([t])[0])
        labels.append(1.0 if positive else 0.0)
    return (
        torch.from_numpy(np.stack(windows)),
        torch.from_numpy(np.ascontiguousarray(np.stack(frames))),
        torch.stack(boxes),
        torch.tensor(labels),
    )


def pretrain_sync(
    data: Union[DubbingDataset, Sequence[ClipData]],
    config: TrainConfig,
    shuffle_labels: bool = False,
    max_steps: Optional[int] = None,
    batch_size: int = SYNC_BATCH_SIZE,
) -> SyncPretrainResult:
    """
    Train the sync scorer to tell matched (audio window, mouth crop) pairs from pairs
    whose audio is shifted by at least ``sync_negative_shift`` frames, then freeze it.

    The last fifth of every clip is held out for the accuracy check. Training stops
    early once held-out accuracy reaches ``sync_target_accuracy``.

    Args:
        data: training clips
        config: run configuration
        shuffle_labels: train on labels permuted independently of the pairs. This control
            run skips the accuracy gate and returns its scorer unfrozen.
        max_steps: step budget (default ``config.sync_pretrain_steps``)
        batch_size: pairs per step

    Returns:
        SyncPretrainResult holding the frozen scorer (unfrozen for a control run)

    Raises:
        TrainingDivergence: held-out accuracy below ``sync_min_accuracy`` at the end of a
            regular run
    """
    clips = _clips_of(data)
    max_steps = config.sync_pretrain_steps if max_steps is None else max_steps
    set_determinism(config.seed)
    scorer = SyncScorer(config.sync_embedding_dim, config.audio_window)
    optimizer = torch.optim.Adam(scorer.parameters(), lr=SYNC_LEARNING_RATE)
    held_audio, held_frames, held_boxes, held_labels = _sync_pairs(
        clips, config, np.random.default_rng([config.seed, 8]), SYNC_HELD_OUT_PAIRS, held_out=True
    )

    def held_out_accuracy() -> float:
        scorer.eval()
        with torch.no_grad():
            predictions = (scorer(held_audio, held_frames, held_boxes) > 0).float()
        scorer.train()
        return float((predictions == held_labels).float().mean())

    history: List[Dict[str, float]] = []
    accuracy = 0.0
    step = 0
    for step in tqdm(range(1, max_steps + 1), desc="pretrain-sync", disable=None):
        rng = np.random.default_rng([config.seed, 7, step])
        audio, frames, boxes, labels = _sync_pairs(clips, config, rng, batch_size, held_out=False)
        if shuffle_labels:
            labels = labels[torch.from_numpy(rng.permutation(len(labels)))]
        loss = F.binary_cross_entropy_with_logits(scorer(audio, frames, boxes), labels)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()

        if step % SYNC_EVAL_EVERY == 0 or step == max_steps:
            accuracy = held_out_accuracy()
            history.append({"step": step, "loss": float(loss), "accuracy": accuracy})
            logger.info(f"sync step {step}: loss={float(loss):.4f} held-out accuracy={accuracy:.3f}")
            if accuracy >= config.sync_target_accuracy and not shuffle_labels:
                break

    if shuffle_labels:
        logger.info(f"Shuffled-label control reached {accuracy:.3f} held-out accuracy after {step} steps")
        return SyncPretrainResult(scorer, accuracy, step, history, control=True)
    if accuracy < config.sync_min_accuracy:
        raise TrainingDivergence(
            f"Sync scorer reached {accuracy:.3f} held-out accuracy after {step} steps "
            f"(minimum {config.sync_min_accuracy})",
            accuracy=accuracy,
        )
    if accuracy < config.sync_target_accuracy:
        logger.warning(f"Sync scorer stopped at {accuracy:.3f} accuracy, below target {config.sync_target_accuracy}")
    scorer.freeze()
    return SyncPretrainResult(scorer, accuracy, step, history)


def finetune(
    base: ModelState,
    clips: Sequence[ClipData],
    steps: int,
    out_dir: Optional[PathLike] = None,
) -> ModelState:
    """
    Continue training on one identity's fine-tuning segment (second half of each clip).

    The base state is never modified; ``steps == 0`` returns an identical copy.
    """
    state = base.copy()
    if steps == 0:
        return state
    dataset = DubbingDataset(clips, state.config, segment="second")
    with DubbingTrainer(state.config, dataset, state=state, out_dir=out_dir) as trainer:
        trainer.run(steps)
    logger.info(f"Fine-tuned {len(clips)} clip(s) for {steps} steps")
    return state


def run_ablation(
    config: TrainConfig,
    clips: Sequence[ClipData],
    steps: int,
    out_dir: Optional[PathLike] = None,
    scorer: Optional[SyncScorer] = None,
    eval_clips: Optional[Sequence[ClipData]] = None,
    conditions: Sequence[str] = ("full",) + ABLATIONS,
) -> List[EvaluationRow]:
    """
    Train the full model and each ablation with the same seed and data, then evaluate
    them on ``eval_clips`` (default: the training clips).

    Writes ``ablation.csv`` / ``ablation.txt`` and one run directory per condition when
    ``out_dir`` is given.
    """
    rows = []
    for condition in conditions:
        flags = {name: name == condition for name in ABLATIONS}
        run_config = config.replace(**flags)
        dataset = DubbingDataset(clips, run_config)
        run_dir = Path(out_dir) / condition if out_dir is not None else None
        logger.info(f"Ablation {condition}: training {steps} steps")
        result = train_loop(run_config, dataset, out_dir=run_dir, scorer=scorer, steps=steps)
        rows.append(evaluate(result.state, eval_clips or clips, condition, scorer=scorer))
    if out_dir is not None:
        write_table(rows, out_dir, stem="ablation")
    return rows
