"""Command line entry point: ``uidorder <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .analysis import RankDeficiencyError
from .corpus import ConfigurationError, RecordFormatError
from .grammars import ContractViolation, GrammarFileError
from .pipeline import MissingArtifactError, RunConfig, StaleArtifactError
from .surprisal import AlignmentError, DocumentOrderError, InfiniteSurprisalError, ModelFormatError
from .treebank import ConlluError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONTRACT = 0, 1, 2, 3

DATA_ERRORS = (ConlluError, RecordFormatError, GrammarFileError, AlignmentError, DocumentOrderError,
               ModelFormatError, InfiniteSurprisalError, MissingArtifactError, StaleArtifactError,
               RankDeficiencyError, OSError)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; that code is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="YAML run config; paths inside are relative to the file")
    p.add_argument("-o", "--output", help="run directory")
    p.add_argument("--language")
    p.add_argument("--treebank", help="input CoNLL-U file")
    p.add_argument("--variant", dest="variants", action="append", metavar="TAG",
                   help="restrict to this variant (repeatable)")
    p.add_argument("--grammar", action="append", default=[], metavar="TAG=PATH", help="weight file for a variant")
    p.add_argument("--promote", help="comma-separated relations promoted to heads ('' for none)")
    p.add_argument("--seed", type=int)
    p.add_argument("--train-budget", type=int, dest="train_budget", help="training words")
    p.add_argument("--eval-budget", type=int, dest="eval_budget", help="validation and test words, each")
    p.add_argument("--split-ratios", dest="split_ratios", help="train,valid,test fractions")
    p.add_argument("--sentences-per-doc", type=int, dest="sentences_per_doc",
                   help="document size when the treebank has no newdoc markers")
    p.add_argument("--strict", action="store_true", default=None, help="abort on malformed sentences")
    p.add_argument("--dataset-size", dest="dataset_size", help="label stored in runs.csv")
    p.add_argument("--eval-split", dest="eval_split", choices=("train", "valid", "test"))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uidorder", description="Counterfactual word-order corpora and UID measurements.")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True
    helps = {
        "transform": "write the parallel corpora for every variant",
        "freq": "word frequency table of a JSONL corpus",
        "train": "fit one n-gram model per variant",
        "score": "write per-word surprisals of the evaluation split",
        "import": "use surprisals from an external model for one variant",
        "uid": "UID metrics and mean surprisal per variant",
        "regress": "treatment-coded regression over run records",
        "report": "per-variant means and directional comparisons",
        "validate": "check every tree of the treebank",
    }
    cmds = {}
    for name, h in helps.items():
        cmds[name] = sub.add_parser(name, help=h, description=h[0].upper() + h[1:] + ".")
        _common(cmds[name])
    cmds["freq"].add_argument("--input", required=True, help="JSONL corpus")
    cmds["freq"].add_argument("--out", required=True, help="destination TSV")
    cmds["import"].add_argument("--file", required=True, help="TSV with doc_id, sent_idx, word_idx, unit, surprisal_bits")
    for name in ("regress", "report"):
        cmds[name].add_argument("--runs", action="append", default=[], help="runs.csv file (repeatable)")
    return parser


def load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    over = {}
    for key in ("output", "language", "treebank", "variants", "seed", "train_budget", "eval_budget",
                "sentences_per_doc", "strict", "dataset_size", "eval_split"):
        val = getattr(args, key)
        if val is not None:
            over[key] = val
    if args.promote is not None:
        over["promote"] = sorted(r for r in args.promote.split(",") if r)
    if args.split_ratios:
        try:
            over["split_ratios"] = [float(x) for x in args.split_ratios.split(",")]
        except ValueError:
            raise ConfigurationError(f"bad --split-ratios {args.split_ratios!r}") from None
    if args.grammar:
        grammars = dict(cfg.grammars)
        for item in args.grammar:
            tag, sep, path = item.partition("=")
            if not sep:
                raise ConfigurationError(f"--grammar expects TAG=PATH, got {item!r}")
            grammars[tag] = path
        over["grammars"] = grammars
    cfg = cfg.updated(over)
    for item in args.set:
        cfg = cfg.set_from_string(item)
    return cfg


def run(args) -> int:
    if args.command == "freq":
        table = pipeline.cmd_freq(args.input, args.out)
        print(f"{len(table.counts)} types, {table.total} tokens -> {args.out}")
        return EXIT_OK
    cfg = load_config(args)
    if args.command == "transform":
        info = pipeline.cmd_transform(cfg)
        for split, c in info["splits"].items():
            print(f"{split}: {c['documents']} documents, {c['sentences']} sentences, {c['words']} words")
    elif args.command == "train":
        for p in pipeline.cmd_train(cfg):
            print(p)
    elif args.command == "score":
        for p in pipeline.cmd_score(cfg):
            print(p)
    elif args.command == "import":
        if not cfg.variants or len(cfg.variants) != 1:
            raise ConfigurationError("import needs exactly one --variant")
        print(pipeline.cmd_import(cfg, cfg.variants[0], args.file))
    elif args.command == "uid":
        for r in pipeline.cmd_uid(cfg):
            print(f"{r.variant}\tuid_v={r.uid_v:.4f}\tuid_lv={r.uid_lv:.4f}\tuid_p={r.uid_p:.4f}"
                  f"\tsurprisal={r.mean_surprisal:.4f}")
    elif args.command == "regress":
        results = pipeline.cmd_regress(cfg, args.runs)
        for lang, res in results.items():
            print(f"{lang}: n={res.n} r2={res.r2:.4f}")
    elif args.command == "report":
        rep = pipeline.cmd_report(cfg, args.runs)
        for t in rep.sign_tests:
            print(f"{t['a']} vs {t['b']} ({t['metric']}): {t['a_lower']}/{t['languages']} lower, p={t['p_value']:.4g}")
    elif args.command == "validate":
        problems = pipeline.cmd_validate(cfg)
        for where, tok, msg in problems:
            print(f"{where}\ttoken {tok}\t{msg}")
        print(f"{len(problems)} problem(s)", file=sys.stderr)
        return EXIT_DATA if problems else EXIT_OK
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ContractViolation as e:
        print(f"contract violation: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (*DATA_ERRORS, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
