"""
Command line interface.

    facedub synth-data    --out data/ --clips 4 --frames 200
    facedub pretrain-sync --data data/ --out runs/sync
    facedub train         --data data/ --out runs/base --sync-scorer runs/sync/sync_scorer.ckpt
    facedub finetune      --data data/ --clip clip_000 --checkpoint runs/base/checkpoints/step_010000.ckpt --steps 200 --out runs/ft
    facedub infer         --data data/ --clip clip_000 --audio data/clip_001/audio.audf --checkpoint ... --out runs/dub
    facedub eval          --data data/ --checkpoint a.ckpt --checkpoint b.ckpt --out runs/eval
    facedub ablate        --data data/ --steps 300 --out runs/ablation

Exit codes: 0 on success, 2 on validation errors, 3 on numerical errors and
training divergence.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .checkpoint import ModelState, load_scorer, save_scorer
from .config import TrainConfig
from .dataio import ClipData, ClipManifest, DubbingDataset, find_manifests
from .errors import FaceDubError, InvalidParameter
from .inference import evaluate, infer, write_table
from .losses import SyncScorer
from .synthetic import synth_generate
from .train import finetune, pretrain_sync, run_ablation, train_loop

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
PRESETS = {"desk": TrainConfig.desk, "tiny": TrainConfig.tiny, "full": TrainConfig.full_resolution}


def configure_logging(verbose: bool = False) -> None:
    """Install a single stream handler on the package logger."""
    package = logging.getLogger("facedub")
    for handler in list(package.handlers):
        package.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    package.addHandler(handler)
    package.setLevel(logging.DEBUG if verbose else logging.INFO)
    package.propagate = False


def load_config(args: argparse.Namespace) -> TrainConfig:
    """
    Build the run configuration: preset or ``--config`` JSON, then flag overrides.

    Raises:
        InvalidParameter: unreadable or invalid configuration
    """
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise InvalidParameter(f"Config file {path} does not exist")
        config = TrainConfig.from_json(path)
    else:
        config = PRESETS[args.preset]()
    changes: Dict[str, Any] = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = str(args.out)
    if getattr(args, "data", None) is not None:
        changes["data_dir"] = str(args.data)
    return config.replace(**changes) if changes else config


def _manifests(args: argparse.Namespace) -> List[ClipManifest]:
    if args.data is None:
        raise InvalidParameter("--data is required")
    manifests = find_manifests(args.data)
    clip_ids = getattr(args, "clip", None)
    if clip_ids:
        wanted = set(clip_ids)
        manifests = [m for m in manifests if m.clip_id in wanted]
        missing = wanted - {m.clip_id for m in manifests}
        if missing:
            raise InvalidParameter(f"Unknown clip id(s): {', '.join(sorted(missing))}")
    return manifests


def _clips(args: argparse.Namespace, config: TrainConfig) -> List[ClipData]:
    return [ClipData.load(m, config.height, config.width, config.crop_margin) for m in _manifests(args)]


def _scorer(args: argparse.Namespace) -> Optional[SyncScorer]:
    if not args.sync_scorer:
        return None
    scorer, meta = load_scorer(args.sync_scorer)
    logger.info(f"Loaded sync scorer {args.sync_scorer} (held-out accuracy {meta.get('accuracy')})")
    return scorer


def _out_dir(args: argparse.Namespace) -> Path:
    if args.out is None:
        raise InvalidParameter("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth_data(args: argparse.Namespace) -> int:
    config = load_config(args)
    height = args.height or config.height
    width = args.width or config.width
    manifests = synth_generate(config.seed, args.clips, args.frames, height, width, _out_dir(args), config.audio_window)
    logger.info(f"Wrote {len(manifests)} synthetic clips to {args.out}")
    return 0


def cmd_pretrain_sync(args: argparse.Namespace) -> int:
    config = load_config(args)
    out = _out_dir(args)
    clips = _clips(args, config)
    result = pretrain_sync(clips, config, shuffle_labels=args.shuffle_labels, max_steps=args.steps)
    (out / "sync_pretrain.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    if result.control:
        logger.info(f"{result!r}; control scorer not saved")
        return 0
    path = save_scorer(out / "sync_scorer.ckpt", result.scorer, config, result.accuracy)
    logger.info(f"{result!r} saved to {path}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    state = None
    if args.checkpoint:
        state = ModelState.load(args.checkpoint)
        config = state.config
        logger.info(f"Resuming {state!r} from {args.checkpoint}")
    else:
        config = load_config(args)
    dataset = DubbingDataset.from_manifests(_manifests(args), config)
    result = train_loop(config, dataset, out_dir=out, scorer=_scorer(args), steps=args.steps, state=state)
    logger.info(f"{result!r}")
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    base = ModelState.load(args.checkpoint)
    config = base.config
    clips = _clips(args, config)
    state = finetune(base, clips, args.steps, out_dir=out)
    path = state.save(out / f"finetuned_{args.steps:04d}.ckpt")
    rows = [
        evaluate(base, clips, "finetune_0", scorer=base.scorer, segment="first"),
        evaluate(state, clips, f"finetune_{args.steps}", scorer=state.scorer, segment="first"),
    ]
    write_table(rows, out, stem="finetune")
    logger.info(f"Fine-tuned model saved to {path}")
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    state = ModelState.load(args.checkpoint)
    manifests = _manifests(args)
    if len(manifests) != 1:
        raise InvalidParameter(f"infer needs exactly one --clip, got {len(manifests)} clips")
    audio = args.audio or manifests[0].resolve(manifests[0].audio_path)
    result = infer(state, manifests[0], audio, out, allow_truncate=args.allow_truncate, scorer=_scorer(args))
    logger.info(f"{result!r}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    out = _out_dir(args)
    scorer = _scorer(args)
    rows = []
    clips: Optional[List[ClipData]] = None
    for checkpoint in args.checkpoint:
        state = ModelState.load(checkpoint)
        if clips is None:
            clips = _clips(args, state.config)
        rows.append(evaluate(state, clips, Path(checkpoint).stem, scorer=scorer, segment=args.segment))
    csv_path, txt_path = write_table(rows, out)
    print(txt_path.read_text(), end="")
    logger.info(f"Evaluation table written to {csv_path}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_config(args)
    out = _out_dir(args)
    clips = _clips(args, config)
    run_ablation(config, clips, args.steps, out_dir=out, scorer=_scorer(args))
    print((out / "ablation.txt").read_text(), end="")
    return 0


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, help="JSON configuration file")
    parser.add_argument("--preset", choices=sorted(PRESETS), default="desk", help="Configuration preset without --config")
    parser.add_argument("--seed", type=int, help="Override the configuration seed")
    parser.add_argument("--out", type=str, help="Output directory")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facedub", description="Identity-preserving lip-sync dubbing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="Render a synthetic talking-face dataset")
    _common(p)
    p.add_argument("--clips", type=int, default=4, help="Number of clips")
    p.add_argument("--frames", type=int, default=200, help="Frames per clip")
    p.add_argument("--height", type=int, help="Frame height (default: config height)")
    p.add_argument("--width", type=int, help="Frame width (default: config width)")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("pretrain-sync", help="Pretrain and freeze the lip-sync scorer")
    _common(p)
    p.add_argument("--data", type=str, help="Dataset directory")
    p.add_argument("--steps", type=int, help="Maximum steps (default: config sync_pretrain_steps)")
    p.add_argument("--shuffle-labels", action="store_true", help="Shuffled-label control run")
    p.set_defaults(func=cmd_pretrain_sync)

    p = sub.add_parser("train", help="Train the dubbing model")
    _common(p)
    p.add_argument("--data", type=str, help="Dataset directory")
    p.add_argument("--steps", type=int, help="Steps to run (default: up to config total_steps)")
    p.add_argument("--checkpoint", type=str, help="Resume from a model checkpoint")
    p.add_argument("--sync-scorer", type=str, help="Frozen sync scorer checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="Fine-tune a trained model on one identity")
    _common(p)
    p.add_argument("--data", type=str, help="Dataset directory")
    p.add_argument("--clip", action="append", required=True, help="Clip id of the identity (repeatable)")
    p.add_argument("--checkpoint", type=str, required=True, help="Base model checkpoint")
    p.add_argument("--steps", type=int, default=200, help="Fine-tuning steps")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("infer", help="Dub a clip with driving audio")
    _common(p)
    p.add_argument("--data", type=str, help="Dataset directory")
    p.add_argument("--clip", action="append", required=True, help="Source clip id")
    p.add_argument("--audio", type=str, help="Driving AUDF features (default: the clip's own audio)")
    p.add_argument("--checkpoint", type=str, required=True, help="Model checkpoint")
    p.add_argument("--sync-scorer", type=str, help="Sync scorer for clip-level sync scores")
    p.add_argument("--allow-truncate", action="store_true", help="Dub only the frames covered by shorter audio")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="Score one or more checkpoints")
    _common(p)
    p.add_argument("--data", type=str, help="Dataset directory")
    p.add_argument("--clip", action="append", help="Restrict to clip id(s)")
    p.add_argument("--checkpoint", action="append", required=True, help="Model checkpoint (repeatable)")
    p.add_argument("--sync-scorer", type=str, help="Sync scorer for the LSE proxy columns")
    p.add_argument("--segment", choices=["first", "second"], help="Evaluate one half of each clip")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="Train and compare the full model with each ablation")
    _common(p)
    p.add_argument("--data", type=str, help="Dataset directory")
    p.add_argument("--steps", type=int, default=300, help="Training steps per condition")
    p.add_argument("--sync-scorer", type=str, help="Frozen sync scorer checkpoint")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        return int(args.func(args))
    except FaceDubError as e:
        logger.error(f"{type(e).__name__}: {e}")
        checkpoint = getattr(e, "checkpoint_path", None)
        if checkpoint:
            logger.error(f"Last good checkpoint: {checkpoint}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
