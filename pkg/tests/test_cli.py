import pytest
import sys
from pathlib import Path
from unittest.mock import patch

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from tokenstyle.cli import build_parser, main, resolve_config
from tokenstyle.config.settings import dump_config


@pytest.fixture
def config_file(tiny_config, tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(dump_config(tiny_config))
    return path


def run(config_file, *argv):
    return main(["--config", str(config_file), "--no-log-file", *argv])


class TestCommandLine:
    """Test cases for the tokenstyle command."""

    def test_config_dump(self, config_file, capsys):
        assert run(config_file, "config", "dump") == 0
        out = capsys.readouterr().out
        assert "[training]" in out
        assert "steps = 4" in out

    def test_flags_override_set(self, config_file):
        args = build_parser().parse_args(
            [
                "--config",
                str(config_file),
                "--set",
                "training.steps=9",
                "--seed",
                "5",
                "train",
                "--steps",
                "3",
            ]
        )
        config = resolve_config(args)
        assert config.training.steps == 3
        assert config.seed == 5

    def test_set_applies(self, config_file):
        argv = ["--config", str(config_file), "--set", "sampler.alpha=2.5"]
        args = build_parser().parse_args([*argv, "config", "dump"])
        assert resolve_config(args).sampler.alpha == 2.5

    def test_corpus_is_reproducible(self, config_file, tiny_config, capsys):
        assert run(config_file, "corpus", "gen") == 0
        first = capsys.readouterr().out
        assert run(config_file, "corpus", "gen") == 0
        assert capsys.readouterr().out == first
        assert tiny_config.corpus_path.exists()
        assert "songs=24" in first

    def test_missing_corpus_is_a_usage_error(self, config_file, capsys):
        assert run(config_file, "train") == 2
        assert capsys.readouterr().err.startswith("error: MissingArtifactError:")

    def test_bad_override(self, config_file, capsys):
        assert run(config_file, "--set", "training.stepz=3", "config", "dump") == 2
        assert "error: ConfigError:" in capsys.readouterr().err

    def test_unexpected_failure(self, config_file, capsys):
        with patch("tokenstyle.cli.TrainingService") as service:
            service.return_value.generate_corpus.side_effect = RuntimeError("disk full")
            assert run(config_file, "corpus", "gen") == 1
        assert "error: RuntimeError: disk full" in capsys.readouterr().err

    def test_train_generate_and_invert(
        self, config_file, tiny_config, tiny_corpus, capsys
    ):
        assert run(config_file, "train", "--generate-corpus") == 0
        assert capsys.readouterr().out.startswith("checkpoint ")
        assert tiny_config.checkpoint_path.exists()

        song_id = tiny_corpus.splits["test"][0].song_id
        generate = ["generate", "--label", "1", "--style-song", str(song_id)]
        assert run(config_file, *generate, "--count", "2") == 0
        assert "predicted_style" in capsys.readouterr().out
        assert (tiny_config.output_dir / "generated.bin").exists()

        assert run(config_file, "invert", "--song", str(song_id), "--steps", "2") == 0
        assert "pseudo_tokens=1" in capsys.readouterr().out
        assert (tiny_config.output_dir / f"song_{song_id}.emb").exists()

        assert run(config_file, "generate", "--guidance", "double") == 2
        assert "ParameterError" in capsys.readouterr().err

    def test_log_file(self, config_file, tiny_config):
        assert main(["--config", str(config_file), "corpus", "gen"]) == 0
        assert (tiny_config.output_dir / "tokenstyle.log").exists()
