"""End-to-end tests of the command-line interface."""

import json

import pytest

from facedub.audio import read_audio_features, write_audio_features
from facedub.cli import build_parser, main
from facedub.dataio import find_manifests

pytestmark = pytest.mark.integration


@pytest.fixture(scope="module")
def trained_run(synthetic_dir, tmp_path_factory):
    """Output directory of a two-step training run on the rendered dataset."""
    out = tmp_path_factory.mktemp("cli_train")
    code = main(["train", "--preset", "tiny", "--data", str(synthetic_dir), "--steps", "2", "--out", str(out)])
    assert code == 0
    return out


@pytest.fixture
def checkpoint(trained_run):
    return str(trained_run / "checkpoints" / "step_000002.ckpt")


class TestParser:
    """Test argument parsing."""

    def test_subcommands(self):
        """Every subcommand parses its own flags."""
        parser = build_parser()
        args = parser.parse_args(["train", "--data", "d", "--steps", "3", "--preset", "tiny"])
        assert (args.command, args.steps, args.preset) == ("train", 3, "tiny")
        args = parser.parse_args(["eval", "--checkpoint", "a", "--checkpoint", "b", "--segment", "first"])
        assert args.checkpoint == ["a", "b"]

    def test_missing_subcommand(self):
        """No subcommand is a usage error."""
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestCommands:
    """Test the subcommands on the rendered dataset."""

    def test_synth_data(self, temp_directory):
        """synth-data writes the requested clips."""
        out = temp_directory / "data"
        code = main(
            ["synth-data", "--preset", "tiny", "--clips", "2", "--frames", "24", "--height", "96", "--width", "72",
             "--out", str(out)]
        )
        assert code == 0
        manifests = find_manifests(out)
        assert len(manifests) == 2
        assert (manifests[0].frame_count, manifests[0].height, manifests[0].width) == (24, 96, 72)

    def test_train(self, trained_run):
        """train writes the loss log, config and checkpoints."""
        lines = (trained_run / "losses.csv").read_text().splitlines()
        assert len(lines) == 3
        assert json.loads((trained_run / "config.json").read_text())["height"] == 64

    def test_resume(self, synthetic_dir, checkpoint, temp_directory):
        """train --checkpoint continues from the saved step."""
        code = main(
            ["train", "--data", str(synthetic_dir), "--checkpoint", checkpoint, "--steps", "1", "--out", str(temp_directory)]
        )
        assert code == 0
        assert (temp_directory / "checkpoints" / "step_000003.ckpt").exists()

    def test_infer(self, synthetic_dir, checkpoint, temp_directory):
        """infer dubs a clip with its own audio."""
        out = temp_directory / "dub"
        code = main(["infer", "--data", str(synthetic_dir), "--clip", "clip_001", "--checkpoint", checkpoint, "--out", str(out)])
        assert code == 0
        summary = json.loads((out / "metrics.json").read_text())
        assert summary["frame_count"] == 60 and not summary["truncated"]

    def test_infer_short_audio(self, synthetic_dir, checkpoint, temp_directory):
        """Short driving audio exits with 2 unless truncation is allowed."""
        manifest = find_manifests(synthetic_dir)[0]
        audio = read_audio_features(manifest.resolve(manifest.audio_path))
        short = temp_directory / "short.audf"
        write_audio_features(short, audio[:6])
        argv = ["infer", "--data", str(synthetic_dir), "--clip", "clip_000", "--checkpoint", checkpoint,
                "--audio", str(short), "--out", str(temp_directory / "dub")]
        assert main(argv) == 2
        assert main(argv + ["--allow-truncate"]) == 0
        assert len(list((temp_directory / "dub" / "frames").glob("*.png"))) == 6

    def test_eval(self, synthetic_dir, checkpoint, temp_directory, capsys):
        """eval prints one table row per checkpoint."""
        code = main(
            ["eval", "--data", str(synthetic_dir), "--clip", "clip_002", "--checkpoint", checkpoint,
             "--segment", "first", "--out", str(temp_directory)]
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert printed.splitlines()[0].split()[0] == "condition"
        assert "step_000002" in printed
        assert (temp_directory / "evaluation.csv").exists()

    def test_shuffled_sync_pretraining_control(self, synthetic_dir, temp_directory):
        """A shuffled-label control run writes its accuracy report and no scorer."""
        code = main(
            ["pretrain-sync", "--preset", "tiny", "--data", str(synthetic_dir), "--shuffle-labels", "--steps", "10",
             "--out", str(temp_directory)]
        )
        assert code == 0
        report = json.loads((temp_directory / "sync_pretrain.json").read_text())
        assert report["control"] is True
        assert 0.0 <= report["accuracy"] <= 1.0
        assert not (temp_directory / "sync_scorer.ckpt").exists()

    def test_sync_pretraining_below_minimum(self, synthetic_dir, temp_directory):
        """A regular run that misses the minimum accuracy exits with the numerical error code."""
        config = temp_directory / "config.json"
        config.write_text(json.dumps({"height": 64, "width": 48, "embedding_dim": 64, "sync_embedding_dim": 32,
                                      "sync_min_accuracy": 1.0}))
        code = main(
            ["pretrain-sync", "--config", str(config), "--data", str(synthetic_dir), "--steps", "1",
             "--out", str(temp_directory / "sync")]
        )
        assert code == 3
        assert not (temp_directory / "sync" / "sync_scorer.ckpt").exists()


class TestErrors:
    """Test exit codes of invalid invocations."""

    def test_invalid_config(self, synthetic_dir, temp_directory):
        """An unreadable config file exits with 2."""
        bad = temp_directory / "bad.json"
        bad.write_text("{not json")
        assert main(["train", "--config", str(bad), "--data", str(synthetic_dir), "--out", str(temp_directory)]) == 2

    def test_invalid_config_value(self, synthetic_dir, temp_directory):
        """A config violating an invariant exits with 2."""
        bad = temp_directory / "bad.json"
        bad.write_text(json.dumps({"height": 30}))
        assert main(["train", "--config", str(bad), "--data", str(synthetic_dir), "--out", str(temp_directory)]) == 2

    def test_missing_config(self, synthetic_dir, temp_directory):
        """A config path that does not exist exits with 2."""
        missing = str(temp_directory / "missing.json")
        assert main(["train", "--config", missing, "--data", str(synthetic_dir), "--out", str(temp_directory)]) == 2

    def test_unknown_clip(self, synthetic_dir, checkpoint, temp_directory):
        """An unknown clip id exits with 2."""
        argv = ["infer", "--data", str(synthetic_dir), "--clip", "clip_999", "--checkpoint", checkpoint,
                "--out", str(temp_directory)]
        assert main(argv) == 2

    def test_empty_data_dir(self, temp_directory):
        """A data directory without manifests exits with 2."""
        empty = temp_directory / "empty"
        empty.mkdir()
        assert main(["train", "--preset", "tiny", "--data", str(empty), "--steps", "1", "--out", str(temp_directory)]) == 2


    def test_missing_checkpoint(self, synthetic_dir, temp_directory):
        """A --checkpoint path that does not exist exits with 2."""
        missing = str(temp_directory / "nope.ckpt")
        argv = ["infer", "--data", str(synthetic_dir), "--clip", "clip_000", "--checkpoint", missing,
                "--out", str(temp_directory / "dub")]
        assert main(argv) == 2
        argv = ["train", "--data", str(synthetic_dir), "--checkpoint", missing, "--steps", "1",
                "--out", str(temp_directory / "train")]
        assert main(argv) == 2

    def test_missing_audio(self, synthetic_dir, checkpoint, temp_directory):
        """A --audio path that does not exist exits with 2."""
        argv = ["infer", "--data", str(synthetic_dir), "--clip", "clip_000", "--checkpoint", checkpoint,
                "--audio", str(temp_directory / "nope.audf"), "--out", str(temp_directory / "dub")]
        assert main(argv) == 2

    def test_missing_sync_scorer(self, synthetic_dir, checkpoint, temp_directory):
        """A --sync-scorer path that does not exist exits with 2."""
        argv = ["eval", "--data", str(synthetic_dir), "--clip", "clip_000", "--checkpoint", checkpoint,
                "--sync-scorer", str(temp_directory / "nope.ckpt"), "--out", str(temp_directory)]
        assert main(argv) == 2
