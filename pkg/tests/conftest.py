from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path

import pytest

from testsum.corpus import KEPT, Api, Assertion, Corpus, CorpusMeta, TestCase
from testsum.extractor import extract_corpus
from testsum.evalrun import generate_semantics
from testsum.llmgw import Gateway, MockProvider

FIXTURES = Path(__file__).parent / "fixtures"
FIXTURE_SRC = FIXTURES / "src"
GOLDEN = Path(__file__).parent / "golden"
EPOCH = datetime(2025, 1, 1, tzinfo=timezone.utc)


def make_case(case_id: str, comment: str = "Checks that the value is stored correctly",
              **overrides) -> TestCase:
    source = '@Test\npublic void t() {\n    assertTrue("flag set", flag);\n}'
    fields = dict(
        id=case_id,
        project="demo",
        test_file_path="demo/DemoTest.java",
        test_class_name="DemoTest",
        test_method_name="t",
        test_source=source,
        comment_raw=f"// {comment}",
        comment_norm=comment,
        assertions=(Assertion('assertTrue("flag set", flag)', Api.ASSERT_TRUE, "flag set"),),
        muts=(),
        filter_status=KEPT,
    )
    fields.update(overrides)
    return TestCase(**fields)


def load_labeled_comments() -> list[tuple[str, str]]:
    rows = []
    for line in (FIXTURES / "comments.tsv").read_text(encoding="utf-8").splitlines():
        label, _, text = line.partition("\t")
        rows.append((label, text))
    return rows


@pytest.fixture(scope="session")
def fixture_corpus() -> Corpus:
    return extract_corpus(FIXTURE_SRC, created_at=EPOCH)


@pytest.fixture(scope="session")
def semantic_corpus(fixture_corpus, tmp_path_factory) -> Corpus:
    gateway = Gateway(MockProvider(0), tmp_path_factory.mktemp("semantics-cache"))
    return generate_semantics(fixture_corpus, gateway)


@pytest.fixture
def small_meta() -> CorpusMeta:
    return CorpusMeta(source_name="demo", created_at=EPOCH, tool_version="0.1.0")


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in mod.CRITERIA:
        terminalreporter.write_line(f"{mod.RESULTS.get(name, 'NOT RUN'):7} {name}")
    for name, status in mod.RESULTS.items():
        if name not in mod.CRITERIA:
            terminalreporter.write_line(f"{status:7} {name}")
