"""Command-line front-end: `tokenstyle <verb> [options]`."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .config.settings import RunConfig, dump_config, load_config, parse_overrides
from .services import (
    EvaluationService,
    GenerationService,
    InversionService,
    TrainingService,
)
from .services.generation_service import guidance_from, load_trained
from .storage.artifacts import save_store
from .utils.errors import TokenStyleError
from .utils.helpers import format_table, hash_file

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _csv_ints(raw: str) -> List[int]:
    return [int(part) for part in raw.split(",") if part.strip()]


def _csv_floats(raw: str) -> List[float]:
    return [float(part) for part in raw.split(",") if part.strip()]


def _csv_strings(raw: str) -> List[str]:
    return [part.strip() for part in raw.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tokenstyle",
        description="Style-conditioned token generation on a synthetic Markov corpus.",
    )
    parser.add_argument(
        "--config", type=Path, default=None, help="Config file in `key = value` format"
    )
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one setting (dot notation, e.g. training.steps=500). "
        "Repeat for multiple overrides.",
    )
    parser.add_argument(
        "--output-dir",
        type=Path,
        default=None,
        help="Artifact directory (overrides output_dir)",
    )
    parser.add_argument(
        "--seed", type=int, default=None, help="Global seed (overrides seed)"
    )
    parser.add_argument(
        "--no-log-file",
        action="store_true",
        help="Do not write <output_dir>/tokenstyle.log",
    )
    verbs = parser.add_subparsers(dest="command", required=True)

    corpus = verbs.add_parser("corpus", help="Synthetic corpus")
    corpus_verbs = corpus.add_subparsers(dest="action", required=True)
    corpus_verbs.add_parser("gen", help="Generate the corpus file of the run")

    train = verbs.add_parser(
        "train", help="Train the conditional decoder and style conditioner"
    )
    train.add_argument(
        "--generate-corpus",
        action="store_true",
        help="Generate the corpus first if it is missing",
    )
    train.add_argument(
        "--no-resume",
        action="store_true",
        help="Start from initialization even if a checkpoint exists",
    )
    train.add_argument(
        "--steps",
        type=int,
        default=None,
        help="Training steps (overrides training.steps)",
    )

    store = verbs.add_parser("store", help="Embedding store")
    store_verbs = store.add_subparsers(dest="action", required=True)
    store_build = store_verbs.add_parser("build", help="Embed the valid and test songs")
    store_build.add_argument(
        "--out",
        type=Path,
        default=None,
        help="Store file (default <output_dir>/store.bin)",
    )

    invert = verbs.add_parser("invert", help="Textual inversion of one song")
    invert.add_argument("--song", type=int, required=True, help="Corpus song id")
    invert.add_argument("--steps", type=int, default=None, help="Optimization steps")
    invert.add_argument("--lr", type=float, default=None, help="Learning rate")
    invert.add_argument("--batch", type=int, default=None, help="Chunks per step")
    invert.add_argument(
        "--n-pseudo-tokens", type=int, default=None, help="Prefix vectors learned"
    )
    invert.add_argument(
        "--out",
        type=Path,
        default=None,
        help="Embedding file (default <output_dir>/song_<id>.emb)",
    )

    generate = verbs.add_parser("generate", help="Sample sequences from the checkpoint")
    generate.add_argument("--label", type=int, default=None, help="Text class id")
    generate.add_argument(
        "--style-song",
        type=int,
        default=None,
        help="Song whose excerpt conditions the style",
    )
    generate.add_argument(
        "--style-start",
        type=int,
        default=None,
        help="Excerpt start (default: middle of the song)",
    )
    generate.add_argument(
        "--embedding",
        type=Path,
        default=None,
        help="Inverted embedding file used as text",
    )
    generate.add_argument(
        "--guidance", choices=["none", "simple", "double"], default=None
    )
    generate.add_argument("--alpha", type=float, default=None)
    generate.add_argument("--beta", type=float, default=None)
    generate.add_argument("--temperature", type=float, default=None)
    generate.add_argument("--top-k", type=int, default=None)
    generate.add_argument(
        "--n-streams", type=int, default=None, help="RVQ depth of the style prefix"
    )
    generate.add_argument("--length", type=int, default=None, help="Tokens per sample")
    generate.add_argument("--count", type=int, default=1, help="Number of samples")
    generate.add_argument(
        "--mode", choices=["guided", "continuation"], default="guided"
    )
    generate.add_argument(
        "--out",
        type=Path,
        default=None,
        help="Token file (default <output_dir>/generated.bin)",
    )

    evaluate = verbs.add_parser("eval", help="Metric reports")
    eval_verbs = evaluate.add_subparsers(dest="action", required=True)

    knn = eval_verbs.add_parser("knn", help="KNN metrics per RVQ depth")
    knn.add_argument(
        "--depths", type=_csv_ints, default=None, help="Comma-separated stream depths"
    )
    knn.add_argument("--k", type=int, default=None, help="Neighbour count")

    sweep = eval_verbs.add_parser(
        "beta-sweep", help="Double guidance with mismatched text and style"
    )
    sweep.add_argument(
        "--betas", type=_csv_floats, default=None, help="Comma-separated betas"
    )

    ablate = eval_verbs.add_parser(
        "ablate", help="Train and evaluate the ablation variants"
    )
    ablate.add_argument(
        "--seeds", type=_csv_ints, default=None, help="Comma-separated seeds"
    )
    ablate.add_argument(
        "--variants",
        type=_csv_strings,
        default=None,
        help="Comma-separated variant names",
    )

    eval_verbs.add_parser(
        "compare", help="Continuation vs style model vs textual inversion"
    )

    for sub in (knn, sweep, eval_verbs.choices["compare"]):
        sub.add_argument("--store", type=Path, default=None, help="Prebuilt store file")
        sub.add_argument(
            "--checkpoint",
            type=Path,
            default=None,
            help="Checkpoint file (default: the run's)",
        )
        sub.add_argument(
            "--n-samples", type=int, default=None, help="Conditioning excerpts"
        )

    config = verbs.add_parser("config", help="Configuration")
    config_verbs = config.add_subparsers(dest="action", required=True)
    config_verbs.add_parser("dump", help="Print every effective setting")
    return parser


def _flag_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Settings overridden by dedicated flags; they take precedence over --set."""
    flags: Dict[str, Any] = {}
    if args.output_dir is not None:
        flags["output_dir"] = str(args.output_dir)
    if args.seed is not None:
        flags["seed"] = args.seed

    command, action = args.command, getattr(args, "action", None)
    if command == "train" and args.steps is not None:
        flags["training.steps"] = args.steps
    elif command == "invert":
        for key in ("steps", "lr", "batch", "n_pseudo_tokens"):
            if getattr(args, key) is not None:
                flags[f"inversion.{key}"] = getattr(args, key)
    elif command == "generate":
        for key in ("guidance", "alpha", "beta", "temperature", "top_k", "length"):
            if getattr(args, key) is not None:
                flags[f"sampler.{key}"] = getattr(args, key)
    elif command == "eval" and action == "knn" and args.k is not None:
        flags["metrics.k"] = args.k
    return flags


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = parse_overrides(args.set)
    overrides.update(_flag_overrides(args))
    return load_config(args.config, overrides)


def configure_logging(config: RunConfig, log_file: bool = True) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        config.output_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(config.output_dir / "tokenstyle.log"))
    logging.basicConfig(
        level=getattr(logging, config.log_level),
        format=config.log_format,
        handlers=handlers,
        force=True,
    )


def _run_corpus(config: RunConfig, args: argparse.Namespace) -> None:
    corpus = TrainingService(config).generate_corpus()
    n_songs = len(corpus.songs("train", "valid", "test"))
    digest = hash_file(config.corpus_path)
    print(f"corpus {config.corpus_path} songs={n_songs} sha256={digest}")


def _run_train(config: RunConfig, args: argparse.Namespace) -> None:
    service = TrainingService(config)
    corpus = None
    if args.generate_corpus and not config.corpus_path.exists():
        corpus = service.generate_corpus()
    result = service.run_train(corpus=corpus, resume=not args.no_resume)
    print(
        f"checkpoint {result.checkpoint_path} step={result.steps} "
        f"final_loss={result.final_loss} sha256={hash_file(result.checkpoint_path)}"
    )


def _run_store(config: RunConfig, args: argparse.Namespace) -> None:
    store = EvaluationService(config).store()
    out = save_store(store, args.out or config.output_dir / "store.bin")
    print(f"store {out} chunks={len(store)} songs={store.n_songs}")


def _run_invert(config: RunConfig, args: argparse.Namespace) -> None:
    out = args.out or config.output_dir / f"song_{args.song}.emb"
    result = InversionService(config).invert_song(args.song, out=out)
    final = result.loss_trace[-1] if result.loss_trace else None
    print(f"embedding {out} pseudo_tokens={result.c.shape[0]} final_loss={final}")


def _run_generate(config: RunConfig, args: argparse.Namespace) -> None:
    out = args.out or config.output_dir / "generated.bin"
    result = GenerationService(config).generate(
        label=args.label,
        style_song=args.style_song,
        style_start=args.style_start,
        embedding_path=args.embedding,
        n_streams=args.n_streams,
        count=args.count,
        mode=args.mode,
        guidance=guidance_from(config),
        out=out,
    )
    print(format_table(result.scores))


def _evaluator(config: RunConfig, args: argparse.Namespace) -> EvaluationService:
    checkpoint_path: Optional[Path] = getattr(args, "checkpoint", None)
    checkpoint = None
    if checkpoint_path is not None:
        checkpoint = load_trained(config, checkpoint_path)
    return EvaluationService(config, checkpoint=checkpoint)


def _run_eval(config: RunConfig, args: argparse.Namespace) -> None:
    evaluator = _evaluator(config, args)
    if args.action == "knn":
        frame = evaluator.run_eval_knn(args.depths, args.n_samples, args.store)
    elif args.action == "beta-sweep":
        frame = evaluator.run_beta_sweep(args.betas, args.n_samples, args.store)
    elif args.action == "ablate":
        frame = evaluator.run_ablation(args.seeds, args.variants)
    else:
        frame = evaluator.run_compare(args.n_samples, args.store)
    print(format_table(frame))


def _run_config(config: RunConfig, args: argparse.Namespace) -> None:
    sys.stdout.write(dump_config(config))


_COMMANDS = {
    "corpus": _run_corpus,
    "train": _run_train,
    "store": _run_store,
    "invert": _run_invert,
    "generate": _run_generate,
    "eval": _run_eval,
    "config": _run_config,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point of the `tokenstyle` command.

    Returns:
        int: 0 on success, 2 for tokenstyle errors, 1 for anything else
    """
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
        configure_logging(
            config, log_file=not args.no_log_file and args.command != "config"
        )
        action = getattr(args, "action", "") or ""
        logger.debug(f"Running {args.command} {action} in {config.output_dir}")
        _COMMANDS[args.command](config, args)
    except TokenStyleError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("error: KeyboardInterrupt: interrupted", file=sys.stderr)
        return EXIT_FAILURE
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
