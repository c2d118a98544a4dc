import logging
from pathlib import Path
from typing import Optional

from ..config.settings import RunConfig
from ..core.cond_model import params_hash
from ..core.textual_inversion import invert
from ..models.checkpoint_models import Checkpoint
from ..models.conditioning_models import InversionResult
from ..models.corpus_models import Corpus
from ..storage.artifacts import save_embedding
from ..utils.errors import CorruptionError, ParameterError
from .generation_service import load_run_corpus, load_trained

logger = logging.getLogger(__name__)


class InversionService:
    """Textual inversion of corpus songs through a frozen checkpoint."""

    def __init__(
        self,
        config: RunConfig,
        checkpoint: Optional[Checkpoint] = None,
        corpus: Optional[Corpus] = None,
    ):
        self.config = config
        self.checkpoint = checkpoint if checkpoint is not None else load_trained(config)
        self.corpus = corpus if corpus is not None else load_run_corpus(config)

    def invert_song(self, song_id: int, out: Optional[Path] = None) -> InversionResult:
        """
        Learn the pseudo-token embedding of one song.

        Args:
            song_id: Corpus song to invert
            out: Embedding file to write (optional)

        Returns:
            InversionResult: c and the per-step loss trace
        """
        try:
            song = self.corpus.song(song_id)
        except KeyError as e:
            raise ParameterError(f"song {song_id} is not in the corpus") from e

        logger.info(
            f"Inverting song {song_id} (style {song.style_id}) "
            f"for {self.config.inversion.steps} steps"
        )
        params = self.checkpoint.params
        before = params_hash(params)
        result = invert(
            params,
            song,
            self.config.inversion,
            seed=self.config.seed,
            progress=self.config.training.progress,
        )
        if params_hash(params) != before:
            raise CorruptionError("model weights changed during inversion")

        if out is not None:
            save_embedding(result, Path(out))
        return result
