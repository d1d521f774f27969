"""Command-line entry points: gen, tokenize, train, eval, sweep, plot."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .errors import LangLabError, StageError
from .runner import ExperimentConfig, RunSpec, expand_runs, plot, run_pipeline, sweep

_STAGE_OF_COMMAND = {
    "gen": "corpus",
    "tokenize": "tokenizer",
    "train": "train",
    "eval": "eval",
}


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig()
    if args.out:
        cfg = dataclasses.replace(cfg, out_dir=str(args.out))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, data_seeds=(args.seed,), model_seeds=(args.seed,))
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config JSON")
    p.add_argument("--seed", type=int, help="use this single seed for data and model")
    p.add_argument("--out", type=Path, help="output directory")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="langlab",
        description="Two procedural languages, one grammar: build corpora, train "
        "tokenizers and a tiny LM, and measure cross-lingual transfer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (
        ("gen", "build ontology, lexicon and corpus"),
        ("tokenize", "train the BPE tokenizer (runs upstream stages as needed)"),
        ("train", "train the language model (runs upstream stages as needed)"),
        ("eval", "evaluate a trained run end to end"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_common(p)

    p = sub.add_parser("sweep", help="run a configuration lattice and aggregate metrics")
    _add_common(p)
    p.add_argument("--lam", type=float, nargs="*", help="mixture ratios to sweep")
    p.add_argument("--vocab-size", type=int, nargs="*", help="vocabulary sizes to sweep")
    p.add_argument("--regime", type=str, nargs="*", help="tokenizer regimes to sweep")
    p.add_argument("--d", type=float, nargs="*", help="lexical distances to sweep")
    p.add_argument("--csv", type=Path, default=Path("sweep.csv"), help="aggregate CSV path")

    p = sub.add_parser("plot", help="emit an SVG chart from a metrics CSV")
    p.add_argument("--csv", type=Path, required=True)
    p.add_argument("--kind", choices=("line", "bar"), default="line")
    p.add_argument("--x", required=True)
    p.add_argument("--y", required=True)
    p.add_argument("--group", default=None)
    p.add_argument("--err", default=None)
    p.add_argument("--title", default="")
    p.add_argument("--out", type=Path, required=True)

    args = parser.parse_args(argv)
    try:
        if args.command in _STAGE_OF_COMMAND:
            cfg = _load_config(args)
            upto = _STAGE_OF_COMMAND[args.command]
            for run in expand_runs(cfg):
                out = run_pipeline(run, upto=upto)
                print(out)
        elif args.command == "sweep":
            base = _load_config(args)
            configs = []
            for lam in args.lam or [base.lam]:
                for v in args.vocab_size or [base.vocab_size]:
                    for regime in args.regime or [base.regime]:
                        for d in args.d or [base.d]:
                            configs.append(
                                dataclasses.replace(
                                    base, lam=lam, vocab_size=v, regime=regime, d=d
                                )
                            )
            out = sweep(configs, args.csv)
            print(out)
        elif args.command == "plot":
            out = plot(
                args.csv, args.kind, args.x, args.y, args.out,
                group_col=args.group, err_col=args.err, title=args.title,
            )
            print(out)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except LangLabError as exc:
        print(f"[{args.command}] {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
