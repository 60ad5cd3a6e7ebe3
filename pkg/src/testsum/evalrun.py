"""End-to-end ablation runner: semantics generation, summary generation over
models x variants, judging, metric scoring, aggregation and reporting."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from testsum import __version__
from testsum.corpus import Corpus, TestCase, iter_json_lines, load_corpus, save_corpus
from testsum.llmgw import (
    JUDGE_TEMPERATURE,
    SEMANTICS_TEMPERATURE,
    SUMMARY_MAX_TOKENS,
    SUMMARY_TEMPERATURE,
    ChatRequest,
    Gateway,
    GatewayError,
    MockProvider,
    Provider,
    load_provider_configs,
    provider_from_config,
)
from testsum.metrics import (
    DEFAULT_CONFIG,
    METRIC_FIELDS,
    AggregateRow,
    MetricConfig,
    ScoreRecord,
    aggregate,
    bertscore,
    bleu4,
    meteor,
    rouge_l,
    tokenize,
)
from testsum.promptkit import (
    SEMANTIC_VARIANTS,
    SEMANTICS_PROMPT_VERSION,
    Variant,
    build_judge_prompt,
    build_semantics_prompt,
    build_summary_prompt,
    clean_semantic,
    extract_summary,
    parse_judge_reply,
    prompt_hash,
)

log = logging.getLogger(__name__)

JUDGE_MAX_TOKENS = 16
SEMANTICS_MAX_TOKENS = 64
METRIC_HEADERS = ("BLEU", "METEOR", "ROUGE-L", "BERTScore F1", "LLM Evals")


class RunError(Exception):
    pass


class PlanError(RunError, ValueError):
    pass


class RunFailed(RunError):
    """More than the tolerated share of cells errored."""


class UnknownVariant(RunError, KeyError):
    pass


@dataclass(frozen=True)
class RunPlan:
    corpus_path: str
    models: tuple[str, ...]
    output_dir: str
    variants: tuple[Variant, ...] = tuple(Variant)
    providers: str = "mock"
    seed: int = 0
    judge_model: str = "gpt-4o"
    semantics_model: str = "gpt-4o"
    embedding_model: str = "mock-embedding"
    max_workers: int = 4
    error_threshold: float = 0.10
    mock_judge_score: float | None = None

    def __post_init__(self):
        if not self.variants:
            raise PlanError("plan needs at least one variant")
        if not self.models:
            raise PlanError("plan needs at least one model")
        if self.max_workers < 1:
            raise PlanError("max_workers must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variants"] = [v.value for v in self.variants]
        d["models"] = list(self.models)
        return d

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path | None = None) -> "RunPlan":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise PlanError(f"unknown plan field(s) {sorted(unknown)}")
        d = dict(data)
        try:
            if "variants" in d:
                d["variants"] = tuple(Variant.parse(v) for v in d["variants"])
            d["models"] = tuple(d.get("models") or ())
        except ValueError as exc:
            raise PlanError(str(exc)) from exc
        if base_dir is not None:
            for key in ("corpus_path", "output_dir", "providers"):
                if key in d and d[key] != "mock" and not os.path.isabs(d[key]):
                    d[key] = str(Path(base_dir) / d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise PlanError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunPlan":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise PlanError(f"{path}: {exc}") from exc
        return cls.from_dict(data, path.parent)


@dataclass
class RunResult:
    plan: RunPlan | None
    records: list[ScoreRecord]
    gt_judge_mean: float | None
    metadata: dict = field(default_factory=dict)
    errors: list[dict] = field(default_factory=list)


def _now() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    ts = (datetime.fromtimestamp(int(epoch), tz=timezone.utc) if epoch is not None
          else datetime.now(timezone.utc).replace(microsecond=0))
    return ts.isoformat()


def _safe_name(case_id: str) -> str:
    return re.sub(r"[^\w.-]+", "_", case_id).strip("_")


def build_gateway(plan: RunPlan, cache_dir: str | Path | None = None) -> Gateway:
    if plan.providers == "mock":
        providers: dict[str, Provider] = {
            "*": MockProvider(plan.seed, judge_score=plan.mock_judge_score)
        }
    else:
        providers = {}
        for cfg in load_provider_configs(plan.providers):
            providers[cfg.model_id or cfg.name] = provider_from_config(cfg)
    return Gateway(providers, cache_dir, max_concurrency=plan.max_workers)


# -- semantics ------------------------------------------------------------------------

def generate_semantics(corpus: Corpus, gateway: Gateway, model_id: str = "gpt-4o",
                       *, max_workers: int = 4) -> Corpus:
    """Attach a one-sentence semantic to every assertion of every kept case.

    One request per distinct statement; replies come from the gateway cache
    on reruns.
    """
    statements = list(dict.fromkeys(
        a.statement for case in corpus.kept() for a in case.assertions
    ))

    def ask(statement: str) -> str:
        req = ChatRequest(model_id, build_semantics_prompt(statement),
                          temperature=SEMANTICS_TEMPERATURE,
                          max_output_tokens=SEMANTICS_MAX_TOKENS)
        try:
            text = clean_semantic(gateway.complete(req).text)
        except GatewayError as exc:
            owners = [c.id for c in corpus.kept() if any(a.statement == statement for a in c.assertions)]
            raise RunError(f"semantics failed for {statement!r} (cases {owners}): {exc}") from exc
        if not text.strip("."):
            raise RunError(f"empty semantic for assertion {statement!r}")
        return text

    with ThreadPoolExecutor(max_workers) as pool:
        meanings = dict(zip(statements, pool.map(ask, statements)))

    entries = []
    for case in corpus:
        if case.kept and case.assertions:
            case = replace(case, assertions=tuple(
                a.with_semantic(meanings[a.statement]) for a in case.assertions))
        entries.append(case)
    return replace(corpus, entries=tuple(entries))


# -- ablation -------------------------------------------------------------------------

def _judge(gateway: Gateway, model_id: str, code: str, comment: str) -> float:
    req = ChatRequest(model_id, build_judge_prompt(code, comment),
                      temperature=JUDGE_TEMPERATURE, max_output_tokens=JUDGE_MAX_TOKENS)
    return parse_judge_reply(gateway.complete(req).text)


def score_cell(case: TestCase, variant: Variant, model_id: str, gateway: Gateway,
               plan: RunPlan, cfg: MetricConfig = DEFAULT_CONFIG) -> ScoreRecord:
    prompt = build_summary_prompt(case, variant)
    reply = gateway.complete(ChatRequest(model_id, prompt.text,
                                         temperature=SUMMARY_TEMPERATURE,
                                         max_output_tokens=SUMMARY_MAX_TOKENS))
    summary = extract_summary(reply.text)
    cand, ref = tokenize(summary), tokenize(case.comment_norm)
    if not cand:
        raise RunError("model returned an empty summary")
    _, _, bert_f = bertscore(cand, ref, gateway.embedder(plan.embedding_model))
    return ScoreRecord(
        case_id=case.id,
        model_id=model_id,
        variant=variant,
        bleu=bleu4(cand, ref, cfg),
        meteor=meteor(cand, ref, cfg),
        rouge_l=rouge_l(cand, ref, cfg),
        bertscore_f1=bert_f,
        judge=_judge(gateway, plan.judge_model, case.test_source, summary),
    )


def run_ablation(plan: RunPlan, gateway: Gateway | None = None,
                 cfg: MetricConfig = DEFAULT_CONFIG) -> RunResult:
    out = Path(plan.output_dir)
    for sub in ("corpus", "prompts", "replies"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    gateway = gateway or build_gateway(plan, out / "replies")
    started = _now()

    corpus = load_corpus(plan.corpus_path)
    if any(v in SEMANTIC_VARIANTS for v in plan.variants):
        missing = any(not a.semantic for c in corpus.kept() for a in c.assertions)
        if missing:
            corpus = generate_semantics(corpus, gateway, plan.semantics_model,
                                        max_workers=plan.max_workers)
    save_corpus(corpus, out / "corpus" / "corpus.l")
    kept = corpus.kept()

    errors: list[dict] = []
    variant_texts: dict[Variant, list[str]] = {v: [] for v in plan.variants}
    cells = []
    for case in kept:
        for variant in plan.variants:
            try:
                bundle = build_summary_prompt(case, variant)
            except ValueError as exc:
                for model in plan.models:
                    errors.append({"case_id": case.id, "model_id": model,
                                   "variant": variant.value, "error": str(exc)})
                continue
            variant_texts[variant].append(bundle.text)
            path = out / "prompts" / _safe_name(case.id) / f"{variant.value}.txt"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(bundle.text, encoding="utf-8")
            cells += [(case, variant, model) for model in plan.models]

    def run_cell(cell):
        case, variant, model = cell
        try:
            return score_cell(case, variant, model, gateway, plan, cfg)
        except (GatewayError, RunError, ValueError) as exc:
            log.warning("cell (%s, %s, %s) failed: %s", case.id, variant.value, model, exc)
            return {"case_id": case.id, "model_id": model, "variant": variant.value,
                    "error": f"{type(exc).__name__}: {exc}"}

    def run_gt(case):
        try:
            return _judge(gateway, plan.judge_model, case.test_source, case.comment_norm)
        except (GatewayError, ValueError) as exc:
            return {"case_id": case.id, "model_id": plan.judge_model,
                    "variant": "GroundTruth", "error": f"{type(exc).__name__}: {exc}"}

    with ThreadPoolExecutor(plan.max_workers) as pool:
        outcomes = list(pool.map(run_cell, cells))
        gt_outcomes = list(pool.map(run_gt, kept))

    records = [o for o in outcomes if isinstance(o, ScoreRecord)]
    errors += [o for o in outcomes if isinstance(o, dict)]
    gt_scores = [o for o in gt_outcomes if isinstance(o, float)]
    errors += [o for o in gt_outcomes if isinstance(o, dict)]
    gt_mean = sum(gt_scores) / len(gt_scores) if gt_scores else None

    metadata = {
        "tool_version": __version__,
        "prompt_hash": {v.value: prompt_hash(*variant_texts[v]) for v in plan.variants},
        "semantics_prompt_version": SEMANTICS_PROMPT_VERSION,
        "decoding": {
            "summary": {"temperature": SUMMARY_TEMPERATURE, "max_output_tokens": SUMMARY_MAX_TOKENS},
            "judge": {"temperature": JUDGE_TEMPERATURE, "max_output_tokens": JUDGE_MAX_TOKENS},
            "semantics": {"temperature": SEMANTICS_TEMPERATURE, "max_output_tokens": SEMANTICS_MAX_TOKENS},
        },
        "judge_model": plan.judge_model,
        "semantics_model": plan.semantics_model,
        "embedding_model": plan.embedding_model,
        "metric_config": asdict(cfg),
        "metric_config_hash": cfg.hash,
        "kept_cases": len(kept),
        "cells": len(kept) * len(plan.variants) * len(plan.models),
        "started_at": started,
        "finished_at": _now(),
    }
    result = RunResult(plan, records, gt_mean, metadata, errors)
    write_result(result, out)
    report(result, "csv", out)
    report(result, "text", out)
    log.info("gateway stats: %s", gateway.stats)

    n_cells = len(kept) * len(plan.variants) * len(plan.models)
    cell_errors = sum(1 for e in errors if e["variant"] != "GroundTruth")
    if n_cells and cell_errors > plan.error_threshold * n_cells:
        raise RunFailed(f"{cell_errors}/{n_cells} cells failed (threshold "
                        f"{plan.error_threshold:.0%}); see {out / 'errors.l'}")
    return result


# -- persistence ---------------------------------------------------------------------

def write_result(result: RunResult, out: str | Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.l", "w", encoding="utf-8") as fh:
        for rec in result.records:
            fh.write(rec.to_json() + "\n")
    with open(out / "errors.l", "w", encoding="utf-8") as fh:
        for err in result.errors:
            fh.write(json.dumps(err, ensure_ascii=False) + "\n")
    meta = {
        "plan": result.plan.to_dict() if result.plan else None,
        "gt_judge_mean": result.gt_judge_mean,
        "metadata": result.metadata,
    }
    (out / "meta.l").write_text(json.dumps(meta, ensure_ascii=False, sort_keys=True) + "\n",
                                encoding="utf-8")


def load_records(path: str | Path) -> list[ScoreRecord]:
    records = []
    for lineno, obj in iter_json_lines(path):
        try:
            records.append(ScoreRecord.from_dict(obj))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return records


def reference_results_dir() -> Path:
    """Packaged per-model, per-variant reference aggregates (one record per row)."""
    return Path(str(resources.files("testsum") / "data" / "table2"))


def load_result(path: str | Path) -> RunResult:
    """Load a run directory (``records.l`` + optional ``meta.l``/``errors.l``)
    or a bare records file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such results path: {path}")
    records_path = path / "records.l" if path.is_dir() else path
    meta_path = records_path.parent / "meta.l" if path.is_dir() else None
    records = load_records(records_path)
    plan, gt, metadata, errors = None, None, {}, []
    if meta_path is not None and meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if meta.get("plan"):
            plan = RunPlan.from_dict(meta["plan"])
        gt = meta.get("gt_judge_mean")
        metadata = meta.get("metadata", {})
    errors_path = records_path.parent / "errors.l"
    if path.is_dir() and errors_path.exists():
        errors = [obj for _, obj in iter_json_lines(errors_path)]
    return RunResult(plan, records, gt, metadata, errors)


# -- comparison and reporting ----------------------------------------------------

@dataclass(frozen=True)
class VariantComparison:
    metric: str
    variant_a: Variant
    variant_b: Variant
    mean_a: float
    mean_b: float
    delta: float
    pct: float


def compare_variants(result: RunResult | Sequence[ScoreRecord], variant_a: Variant | str,
                     variant_b: Variant | str, metric: str = "judge") -> VariantComparison:
    records = result.records if isinstance(result, RunResult) else list(result)
    if metric not in METRIC_FIELDS:
        raise ValueError(f"unknown metric {metric!r}")
    a = variant_a if isinstance(variant_a, Variant) else Variant.parse(variant_a)
    b = variant_b if isinstance(variant_b, Variant) else Variant.parse(variant_b)

    def mean(v: Variant) -> float:
        vals = [getattr(r, metric) for r in records if r.variant is v]
        if not vals:
            raise UnknownVariant(f"variant {v.value} not present in result")
        return sum(vals) / len(vals)

    ma, mb = mean(a), mean(b)
    delta = ma - mb
    pct = 100.0 * delta / mb if mb else float("nan")
    return VariantComparison(metric, a, b, round(ma, 2), round(mb, 2),
                             round(delta, 2), round(pct, 1))


def _best_flags(rows: list[AggregateRow]) -> list[set[str]]:
    flags: list[set[str]] = [set() for _ in rows]
    by_model: dict[str, list[int]] = {}
    for i, row in enumerate(rows):
        by_model.setdefault(row.model_id, []).append(i)
    for idxs in by_model.values():
        for f in METRIC_FIELDS:
            top = max(getattr(rows[i], f) for i in idxs)
            for i in idxs:
                if getattr(rows[i], f) == top:
                    flags[i].add(f)
    return flags


def _header_lines(result: RunResult) -> list[str]:
    md = result.metadata
    lines = [f"tool_version: {md.get('tool_version', __version__)}"]
    for key in ("judge_model", "semantics_model", "embedding_model", "metric_config_hash"):
        if key in md:
            lines.append(f"{key}: {md[key]}")
    if "decoding" in md:
        lines.append("decoding: " + json.dumps(md["decoding"], sort_keys=True))
    if "prompt_hash" in md:
        lines.append("prompt_hash: " + json.dumps(md["prompt_hash"], sort_keys=True))
    if result.gt_judge_mean is not None:
        lines.append(f"ground-truth LLM-Eval: {result.gt_judge_mean:.2f}/5")
    if result.errors:
        lines.append(f"error rows: {len(result.errors)}")
    return lines


def render_text(result: RunResult) -> str:
    rows = aggregate(result.records)
    flags = _best_flags(rows)
    table = [("Model", "Variant", *METRIC_HEADERS)]
    for row, best in zip(rows, flags):
        cells = [f"{getattr(row, f):.2f}" + ("*" if f in best else "") for f in METRIC_FIELDS]
        table.append((row.model_id, row.variant.label, *cells))
    widths = [max(len(r[i]) for r in table) for i in range(len(table[0]))]
    out = io.StringIO()
    for line in _header_lines(result):
        out.write(f"# {line}\n")
    out.write("# * marks the highest per-model score for each metric\n")
    for k, r in enumerate(table):
        cells = [r[0].ljust(widths[0]), r[1].ljust(widths[1])]
        cells += [c.rjust(w) for c, w in zip(r[2:], widths[2:])]
        out.write("  ".join(cells).rstrip() + "\n")
        if k == 0:
            out.write("  ".join("-" * w for w in widths) + "\n")
    return out.getvalue()


def render_csv(result: RunResult) -> str:
    rows = aggregate(result.records)
    flags = _best_flags(rows)
    out = io.StringIO()
    for line in _header_lines(result):
        out.write(f"# {line}\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["model", "variant", *METRIC_FIELDS, "n", "best"])
    for row, best in zip(rows, flags):
        writer.writerow([row.model_id, row.variant.value,
                         *(f"{getattr(row, f):.2f}" for f in METRIC_FIELDS), row.n,
                         ";".join(f for f in METRIC_FIELDS if f in best)])
    return out.getvalue()


def report(result: RunResult, format: str = "text", out_dir: str | Path | None = None) -> str:
    """Render the aggregate table; writes ``report.<csv|txt>`` when ``out_dir`` is given."""
    if not result.records:
        raise RunError("no records to report")
    if format == "csv":
        text, name = render_csv(result), "report.csv"
    elif format == "text":
        text, name = render_text(result), "report.txt"
    else:
        raise ValueError(f"unknown report format {format!r}")
    if out_dir is not None:
        Path(out_dir, name).write_text(text, encoding="utf-8")
    return text
