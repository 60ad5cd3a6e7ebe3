from __future__ import annotations

import json
import time
from pathlib import Path

import pytest

from testsum.corpus import Api, Assertion, Corpus, save_corpus
from testsum.evalrun import (
    PlanError,
    RunFailed,
    RunPlan,
    RunResult,
    UnknownVariant,
    build_gateway,
    compare_variants,
    generate_semantics,
    load_result,
    reference_results_dir,
    report,
    run_ablation,
)
from testsum.llmgw import ChatReply, Gateway, MockProvider, ProviderError
from testsum.metrics import METRIC_FIELDS, ScoreRecord, aggregate
from testsum.promptkit import JUDGE_HEAD, Variant

from conftest import make_case


class Interrupt(BaseException):
    pass


class InterruptingProvider:
    """Delegates to a mock and aborts the whole run after ``after`` calls."""

    name = "mock"

    def __init__(self, inner, after: int):
        self.inner, self.after, self.calls = inner, after, 0

    def chat(self, request):
        self.calls += 1
        if self.calls > self.after:
            raise Interrupt()
        return self.inner.chat(request)

    def embed(self, request):
        return self.inner.embed(request)


class FailingModel:
    """Mock provider that refuses summary requests, but not judge or semantics ones."""

    name = "failing"

    def __init__(self, inner):
        self.inner = inner

    def chat(self, request):
        if request.user_text.startswith(JUDGE_HEAD) or "[ASSERTION]" in request.user_text:
            return self.inner.chat(request)
        raise ProviderError(400, "model refused")

    def embed(self, request):
        return self.inner.embed(request)


@pytest.fixture
def corpus_file(tmp_path, fixture_corpus) -> Path:
    path = tmp_path / "corpus.l"
    save_corpus(fixture_corpus, path)
    return path


def _plan(corpus_file, out, **kw) -> RunPlan:
    kw.setdefault("models", ("mock-a", "mock-b"))
    return RunPlan(corpus_path=str(corpus_file), output_dir=str(out), **kw)


def _tree(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(autouse=True)
def _fixed_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1735689600")


# -- plan ----------------------------------------------------------------------------

def test_plan_validation(tmp_path):
    with pytest.raises(PlanError):
        RunPlan("c.l", models=("m",), output_dir="o", variants=())
    with pytest.raises(PlanError):
        RunPlan("c.l", models=(), output_dir="o")
    with pytest.raises(PlanError, match="bogus"):
        RunPlan.from_dict({"corpus_path": "c", "models": ["m"], "output_dir": "o", "bogus": 1})
    with pytest.raises(PlanError):
        RunPlan.from_dict({"corpus_path": "c", "models": ["m"], "output_dir": "o",
                           "variants": ["NoSuchVariant"]})


def test_plan_file_paths_resolve_against_plan_dir(tmp_path):
    path = tmp_path / "mock.plan"
    path.write_text(json.dumps({"corpus_path": "c.l", "models": ["m"], "output_dir": "out",
                                "variants": ["TestOnly", "Test method with mut"]}))
    plan = RunPlan.load(path)
    assert plan.corpus_path == str(tmp_path / "c.l")
    assert plan.variants == (Variant.TEST_ONLY, Variant.WITH_MUT)
    assert plan.providers == "mock"
    assert RunPlan.from_dict(plan.to_dict()) == plan


# -- end to end ---------------------------------------------------------------------

def test_full_run_cardinality_and_layout(tmp_path, corpus_file):
    start = time.perf_counter()
    result = run_ablation(_plan(corpus_file, tmp_path / "out"))
    assert time.perf_counter() - start < 60
    assert len(result.records) == 10 * 7 * 2
    assert result.errors == []
    out = tmp_path / "out"
    for name in ("corpus", "prompts", "replies", "records.l", "report.csv", "report.txt", "meta.l"):
        assert (out / name).exists(), name
    assert len(list((out / "prompts").rglob("*.txt"))) == 70
    assert len((out / "records.l").read_text().splitlines()) == 140
    meta = json.loads((out / "meta.l").read_text())
    assert set(meta["metadata"]["prompt_hash"]) == {v.value for v in Variant}
    assert meta["metadata"]["judge_model"] == "gpt-4o"
    assert meta["metadata"]["decoding"]["summary"] == {"temperature": 0.2, "max_output_tokens": 128}


def test_report_rows_and_max_marks(tmp_path, corpus_file):
    result = run_ablation(_plan(corpus_file, tmp_path / "out"))
    text = report(result, "text")
    data = [ln for ln in text.splitlines() if ln.startswith("mock-")]
    assert len(data) == 14
    header = next(ln for ln in text.splitlines() if ln.startswith("Model"))
    cols = ["BLEU", "METEOR", "ROUGE-L", "BERTScore F1", "LLM Evals"]
    assert [header.index(c) for c in cols] == sorted(header.index(c) for c in cols)
    rows = aggregate(result.records)
    for f in METRIC_FIELDS:
        for model in ("mock-a", "mock-b"):
            group = [r for r in rows if r.model_id == model]
            top = max(getattr(r, f) for r in group)
            expected = sum(1 for r in group if getattr(r, f) == top)
            csv_rows = [ln.split(",") for ln in report(result, "csv").splitlines()
                        if ln.startswith(model)]
            assert sum(1 for r in csv_rows if f in r[-1].split(";")) == expected
    assert "ground-truth LLM-Eval" in text


def test_report_matches_aggregate(tmp_path, corpus_file):
    result = run_ablation(_plan(corpus_file, tmp_path / "out"))
    lines = [ln for ln in report(result, "csv").splitlines() if not ln.startswith("#")]
    body = [ln.split(",") for ln in lines[1:]]
    for row, agg in zip(body, aggregate(result.records)):
        assert row[0] == agg.model_id and row[1] == agg.variant.value
        assert [float(x) for x in row[2:7]] == list(agg.values())


def test_rerun_is_bit_identical_from_cache(tmp_path, corpus_file):
    plan = _plan(corpus_file, tmp_path / "out")
    first = run_ablation(plan)
    snapshot = _tree(tmp_path / "out")
    gateway = build_gateway(plan, tmp_path / "out" / "replies")
    second = run_ablation(plan, gateway)
    assert gateway.stats.provider_calls == 0
    assert gateway.stats.misses == 0 and gateway.stats.hits > 0
    assert second.records == first.records
    assert second.gt_judge_mean == first.gt_judge_mean
    assert _tree(tmp_path / "out") == snapshot


def test_interrupted_run_resumes_to_identical_report(tmp_path, corpus_file):
    reference = run_ablation(_plan(corpus_file, tmp_path / "clean"))

    plan = _plan(corpus_file, tmp_path / "resumed")
    flaky = InterruptingProvider(MockProvider(plan.seed), after=120)
    with pytest.raises(Interrupt):
        run_ablation(plan, Gateway({"*": flaky}, tmp_path / "resumed" / "replies"))
    assert not (tmp_path / "resumed" / "report.txt").exists()

    resumed = run_ablation(plan)
    assert resumed.records == reference.records
    assert ((tmp_path / "resumed" / "report.txt").read_bytes()
            == (tmp_path / "clean" / "report.txt").read_bytes())


def test_constant_judge_gives_exact_ground_truth_mean(tmp_path, corpus_file):
    result = run_ablation(_plan(corpus_file, tmp_path / "out", mock_judge_score=3,
                                variants=(Variant.TEST_ONLY,)))
    assert result.gt_judge_mean == 3.0
    assert "ground-truth LLM-Eval: 3.00/5" in report(result, "text")
    assert all(r.judge == 3.0 for r in result.records)


def test_ground_truth_is_one_judge_call_per_kept_case(tmp_path, corpus_file, fixture_corpus):
    plan = _plan(corpus_file, tmp_path / "out", variants=(Variant.TEST_ONLY,), models=("m",))
    judged = []

    class Recorder(MockProvider):
        def chat(self, request):
            if request.user_text.startswith(JUDGE_HEAD):
                judged.append(request.user_text)
            return super().chat(request)

    run_ablation(plan, Gateway(Recorder(0)))
    comments = [c.comment_norm for c in fixture_corpus.kept()]
    gt_calls = [t for t in judged if any(t.endswith(f"Comment: {c}\n") for c in comments)]
    assert len(gt_calls) == len(comments)
    assert len(judged) == 2 * len(comments)


def test_cell_errors_below_threshold_become_error_rows(tmp_path, corpus_file):
    plan = RunPlan(str(corpus_file), models=("ok", "bad"), output_dir=str(tmp_path / "out"),
                   variants=(Variant.TEST_ONLY,), error_threshold=0.6)
    mock = MockProvider(0)
    result = run_ablation(plan, Gateway({"bad": FailingModel(mock), "*": mock}))
    assert len(result.records) == 10
    assert len(result.errors) == 10
    assert all(e["model_id"] == "bad" and "model refused" in e["error"] for e in result.errors)
    assert len((tmp_path / "out" / "errors.l").read_text().splitlines()) == 10


def test_too_many_errors_fail_the_run(tmp_path, corpus_file):
    plan = RunPlan(str(corpus_file), models=("ok", "bad"), output_dir=str(tmp_path / "out"),
                   variants=(Variant.TEST_ONLY,))
    mock = MockProvider(0)
    with pytest.raises(RunFailed, match="10/20"):
        run_ablation(plan, Gateway({"bad": FailingModel(mock), "*": mock}))
    assert (tmp_path / "out" / "errors.l").exists()


# -- semantics -----------------------------------------------------------------------

class OneLiner:
    name = "scripted"

    def __init__(self, text):
        self.text, self.calls = text, 0

    def chat(self, request):
        self.calls += 1
        return ChatReply(self.text, 1, 1, self.name)


def test_generate_semantics_attaches_sentence(tmp_path):
    statement = 'assertThat("Invalid age", user.getAge(), is(equalTo(18)))'
    case = make_case("age", test_source=f"@Test\nvoid t() {{\n    {statement};\n}}",
                     assertions=(Assertion(statement, Api.ASSERT_THAT, "Invalid age"),))
    empty = make_case("none", assertions=())
    provider = OneLiner("Checks that the user's age equals 18.\nIt also ...")
    gw = Gateway(provider, tmp_path)
    out = generate_semantics(Corpus((case, empty)), gw)
    assert out.get("age").assertions[0].semantic == "Checks that the user's age equals 18."
    assert out.get("none") == empty
    generate_semantics(Corpus((case, empty)), gw)
    assert provider.calls == 1


def test_generate_semantics_one_call_per_distinct_statement(tmp_path):
    a = make_case("a")
    b = make_case("b")
    provider = OneLiner("Checks the flag.")
    out = generate_semantics(Corpus((a, b)), Gateway(provider, tmp_path))
    assert provider.calls == 1
    assert all(c.assertions[0].semantic == "Checks the flag." for c in out)


def test_generate_semantics_error_names_case(tmp_path):
    class Broken:
        name = "broken"

        def chat(self, request):
            raise ProviderError(401, "denied")

    with pytest.raises(Exception, match="'a'") as err:
        generate_semantics(Corpus((make_case("a"),)), Gateway(Broken(), tmp_path))
    assert "flag set" in str(err.value)


def test_missing_semantics_are_generated_before_prompting(tmp_path, fixture_corpus):
    path = tmp_path / "c.l"
    save_corpus(fixture_corpus, path)
    plan = _plan(path, tmp_path / "out", variants=(Variant.TEST_ONLY, Variant.WITH_SEMANTICS))
    result = run_ablation(plan)
    assert len(result.records) == 40 and result.errors == []


# -- comparison and reference data --------------------------------------------------

def _records(judges: dict[Variant, list[float]]) -> list[ScoreRecord]:
    return [ScoreRecord(f"c{i}", "m", v, 10, 10, 10, 80, j)
            for v, js in judges.items() for i, j in enumerate(js)]


def test_compare_variants_arithmetic():
    recs = _records({Variant.WITH_SEMANTICS: [4.0, 4.0], Variant.TEST_ONLY: [2.0, 2.0]})
    cmp = compare_variants(recs, Variant.WITH_SEMANTICS, Variant.TEST_ONLY)
    assert (cmp.mean_a, cmp.mean_b, cmp.delta, cmp.pct) == (4.0, 2.0, 2.0, 100.0)
    same = compare_variants(recs, "TestOnly", "TestOnly")
    assert (same.delta, same.pct) == (0.0, 0.0)
    with pytest.raises(UnknownVariant):
        compare_variants(recs, Variant.WITH_MUT, Variant.TEST_ONLY)
    with pytest.raises(ValueError):
        compare_variants(recs, Variant.TEST_ONLY, Variant.TEST_ONLY, metric="nope")


def test_compare_stored_abstract_means():
    recs = _records({Variant.WITH_SEMANTICS: [4.45], Variant.WITH_MUT: [4.35]})
    cmp = compare_variants(RunResult(None, recs, None), Variant.WITH_SEMANTICS, Variant.WITH_MUT)
    assert (cmp.delta, cmp.pct) == (0.10, 2.3)


def test_reference_rendering():
    result = load_result(reference_results_dir())
    assert len(result.records) == 28 and result.gt_judge_mean == 3.43
    line = next(ln for ln in report(result, "text").splitlines()
                if ln.startswith("Codex") and "Test method with semantics" in ln)
    values = [v.rstrip("*") for v in line.split()[-5:]]
    assert values == ["17.77", "28.36", "22.56", "86.76", "4.81"]


def test_load_result_accepts_records_file(tmp_path):
    records = reference_results_dir() / "records.l"
    result = load_result(records)
    assert len(result.records) == 28 and result.gt_judge_mean is None
    with pytest.raises(FileNotFoundError, match="missing.l"):
        load_result(tmp_path / "missing.l")
