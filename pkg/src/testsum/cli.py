"""Command-line entry point: ``testsum <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from testsum import corpus as corpus_mod
from testsum import evalrun, extractor, metrics
from testsum.llmgw import Gateway, GatewayError, MockProvider, load_provider_configs, provider_from_config

EXIT_OK, EXIT_INVALID, EXIT_THRESHOLD = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; 2 is reserved for the provider threshold
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="testsum", description="Test-summary extraction, prompting and evaluation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("extract", help="build a corpus from a tree of .java files")
    s.add_argument("src_dir")
    s.add_argument("--map", dest="mapping", help="test_path<TAB>production_path overrides")
    s.add_argument("--all-tests", action="store_true",
                   help="keep tests without any assertion message")
    s.add_argument("-o", "--output", required=True)

    s = sub.add_parser("filter", help="re-apply the comment filters to a corpus")
    s.add_argument("corpus")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--report", help="write <id>\\t<reason> lines for rejected cases")

    s = sub.add_parser("semantics", help="attach generated assertion semantics")
    s.add_argument("corpus")
    s.add_argument("--provider", required=True, help="provider config file, or 'mock'")
    s.add_argument("--model", default="gpt-4o")
    s.add_argument("--cache", default=".testsum-cache")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output", help="defaults to overwriting the input corpus")

    s = sub.add_parser("run", help="run the ablation described by a plan file")
    s.add_argument("--plan", required=True)

    s = sub.add_parser("report", help="render the aggregate table of a finished run")
    s.add_argument("results", help="run directory or records file")
    s.add_argument("--format", choices=("csv", "text"), default="text")

    s = sub.add_parser("metrics", help="score candidate lines against reference lines")
    s.add_argument("--candidate", required=True)
    s.add_argument("--reference", required=True)
    return p


def _cmd_extract(args) -> int:
    mapping = extractor.load_mapping(args.mapping) if args.mapping else None
    c = extractor.extract_corpus(args.src_dir, mapping, require_message=not args.all_tests)
    corpus_mod.save_corpus(c, args.output)
    print(f"{len(c)} cases, {len(c.kept())} kept -> {args.output}")
    return EXIT_OK


def _cmd_filter(args) -> int:
    c = corpus_mod.apply_filters(corpus_mod.load_corpus(args.corpus))
    corpus_mod.save_corpus(c, args.output)
    if args.report:
        Path(args.report).write_text(corpus_mod.filter_report(c), encoding="utf-8")
    print(f"{len(c.kept())}/{len(c)} kept -> {args.output}")
    return EXIT_OK


def _cmd_semantics(args) -> int:
    if args.provider == "mock":
        providers = MockProvider(args.seed)
    else:
        providers = {cfg.model_id or cfg.name: provider_from_config(cfg)
                     for cfg in load_provider_configs(args.provider)}
    gateway = Gateway(providers, args.cache)
    c = evalrun.generate_semantics(corpus_mod.load_corpus(args.corpus), gateway, args.model)
    out = args.output or args.corpus
    corpus_mod.save_corpus(c, out)
    print(f"semantics attached ({gateway.stats.provider_calls} provider calls) -> {out}")
    return EXIT_OK


def _cmd_run(args) -> int:
    plan = evalrun.RunPlan.load(args.plan)
    try:
        result = evalrun.run_ablation(plan)
    except evalrun.RunFailed as exc:
        print(f"testsum: {exc}", file=sys.stderr)
        return EXIT_THRESHOLD
    print(f"{len(result.records)} records, {len(result.errors)} errors -> {plan.output_dir}")
    return EXIT_OK


def _cmd_report(args) -> int:
    result = evalrun.load_result(args.results)
    sys.stdout.write(evalrun.report(result, args.format))
    return EXIT_OK


def _read_lines(path: str) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _cmd_metrics(args) -> int:
    cands, refs = _read_lines(args.candidate), _read_lines(args.reference)
    if len(cands) != len(refs):
        raise ValueError(f"{len(cands)} candidate lines vs {len(refs)} reference lines")
    print("line\tbleu\tmeteor\trouge_l")
    totals = [0.0, 0.0, 0.0]
    for i, (c, r) in enumerate(zip(cands, refs), 1):
        ct, rt = metrics.tokenize(c), metrics.tokenize(r)
        row = (metrics.bleu4(ct, rt), metrics.meteor(ct, rt), metrics.rouge_l(ct, rt))
        totals = [t + v for t, v in zip(totals, row)]
        print(f"{i}\t" + "\t".join(f"{v:.2f}" for v in row))
    if cands:
        print("mean\t" + "\t".join(f"{t / len(cands):.2f}" for t in totals))
    return EXIT_OK


_COMMANDS = {
    "extract": _cmd_extract,
    "filter": _cmd_filter,
    "semantics": _cmd_semantics,
    "run": _cmd_run,
    "report": _cmd_report,
    "metrics": _cmd_metrics,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        detail = f"no such file or directory: {exc.filename}" if exc.filename else str(exc)
        print(f"testsum: {detail}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, KeyError, OSError, GatewayError, evalrun.RunError,
            extractor.ExtractionError) as exc:
        print(f"testsum: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
