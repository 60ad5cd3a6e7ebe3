"""Benchmark data model, comment normalization, comment-quality filters and storage."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable

from testsum import __version__

__all__ = [
    "Api",
    "Assertion",
    "MethodUnderTest",
    "Reason",
    "FilterStatus",
    "KEPT",
    "FilterConfig",
    "TestCase",
    "CorpusMeta",
    "Corpus",
    "CorpusFormatError",
    "DuplicateIdError",
    "normalize_comment",
    "word_count",
    "is_english",
    "filter_comment",
    "apply_filters",
    "filter_report",
    "save_corpus",
    "load_corpus",
]


class Api(str, Enum):
    ASSERT_EQUALS = "AssertEquals"
    ASSERT_TRUE = "AssertTrue"
    ASSERT_FALSE = "AssertFalse"
    ASSERT_NULL = "AssertNull"
    ASSERT_NOT_NULL = "AssertNotNull"
    ASSERT_THAT = "AssertThat"
    ASSERT_SAME = "AssertSame"
    ASSERT_NOT_SAME = "AssertNotSame"
    ASSERT_ARRAY_EQUALS = "AssertArrayEquals"
    FAIL = "Fail"
    OTHER = "Other"


@dataclass(frozen=True)
class Assertion:
    statement: str
    api: Api
    message: str | None = None
    semantic: str | None = None

    def with_semantic(self, semantic: str) -> "Assertion":
        return replace(self, semantic=semantic)


@dataclass(frozen=True)
class MethodUnderTest:
    qualified_name: str
    signature: str
    body: str

    @property
    def simple_name(self) -> str:
        return self.qualified_name.rsplit(".", 1)[-1]


class Reason(str, Enum):
    """Why a comment was rejected. Declaration order is the check order."""

    EMPTY = "Empty"
    NON_ENGLISH = "NonEnglish"
    PLACEHOLDER = "Placeholder"
    LINK_ONLY = "LinkOnly"
    TOO_SHORT = "TooShort"


@dataclass(frozen=True)
class FilterStatus:
    reason: Reason | None = None

    @property
    def kept(self) -> bool:
        return self.reason is None

    def __str__(self) -> str:
        return "Kept" if self.reason is None else f"Rejected({self.reason.value})"

    @classmethod
    def parse(cls, text: str) -> "FilterStatus":
        if text == "Kept":
            return cls()
        m = re.fullmatch(r"Rejected\((\w+)\)", text)
        if not m:
            raise ValueError(f"bad filter_status {text!r}")
        return cls(Reason(m.group(1)))


KEPT = FilterStatus()


@dataclass(frozen=True)
class TestCase:
    __test__ = False  # not a pytest class

    id: str
    project: str
    test_file_path: str
    test_class_name: str
    test_method_name: str
    test_source: str
    comment_raw: str
    comment_norm: str
    assertions: tuple[Assertion, ...] = ()
    muts: tuple[MethodUnderTest, ...] = ()
    filter_status: FilterStatus = KEPT

    @property
    def kept(self) -> bool:
        return self.filter_status.kept


@dataclass(frozen=True)
class CorpusMeta:
    source_name: str = ""
    created_at: datetime = field(
        default_factory=lambda: datetime.fromtimestamp(0, tz=timezone.utc)
    )
    tool_version: str = __version__


@dataclass(frozen=True)
class Corpus:
    entries: tuple[TestCase, ...] = ()
    meta: CorpusMeta = field(default_factory=CorpusMeta)

    def __post_init__(self):
        seen = set()
        for case in self.entries:
            if case.id in seen:
                raise DuplicateIdError(case.id)
            seen.add(case.id)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def kept(self) -> list[TestCase]:
        return [c for c in self.entries if c.kept]

    def get(self, case_id: str) -> TestCase:
        for c in self.entries:
            if c.id == case_id:
                return c
        raise KeyError(case_id)


class CorpusFormatError(ValueError):
    def __init__(self, line: int, detail: str):
        super().__init__(f"line {line}: {detail}")
        self.line = line


class DuplicateIdError(CorpusFormatError):
    def __init__(self, case_id: str, line: int = 0):
        ValueError.__init__(
            self, f"duplicate id {case_id!r}" + (f" at line {line}" if line else "")
        )
        self.case_id = case_id
        self.line = line


# -- normalization -----------------------------------------------------------

_LEADING_MARKER = re.compile(r"^\s*(?:/\*+|\*+/|//+|\*+)")
_TRAILING_MARKER = re.compile(r"\*+/\s*$")


def _strip_line(line: str) -> str:
    prev = None
    while prev != line:
        prev = line
        line = _LEADING_MARKER.sub("", line, count=1)
        line = _TRAILING_MARKER.sub("", line, count=1).rstrip()
    return line.strip()


def normalize_comment(raw: str) -> str:
    """Strip ``/* */``, ``/** */`` and ``//`` markers and the ``*`` gutter, then
    collapse all whitespace runs to single spaces."""
    lines = (_strip_line(line) for line in raw.splitlines())
    return " ".join(" ".join(lines).split())


def word_count(text: str) -> int:
    return len(text.split())


# -- filters -----------------------------------------------------------------

_URL_TOKEN = re.compile(r"^(?:https?://|www\.)", re.IGNORECASE)
_HTML_TAG = re.compile(r"<[^<>]*>")
_PUNCT = re.compile(r"[^\w\s]|_")


@dataclass(frozen=True)
class FilterConfig:
    min_words: int = 4
    english_ratio: float = 0.9
    placeholder_words: frozenset[str] = frozenset({"todo", "fixme", "deprecated"})


DEFAULT_FILTER = FilterConfig()


def is_english(text: str, min_ratio: float = DEFAULT_FILTER.english_ratio) -> bool:
    letters = [c for c in text if c.isalpha()]
    if not letters:
        return False
    latin = sum(1 for c in letters if ("a" <= c <= "z") or ("A" <= c <= "Z"))
    return latin / len(letters) >= min_ratio


def _is_placeholder(text: str, cfg: FilterConfig) -> bool:
    words = _PUNCT.sub(" ", text).lower().split()
    if not words:
        return False
    if set(words) <= cfg.placeholder_words:
        return True
    return words[0] in cfg.placeholder_words and len(words) - 1 < cfg.min_words


def _is_link_only(text: str, cfg: FilterConfig) -> bool:
    without_tags, n_tags = _HTML_TAG.subn(" ", text)
    tokens = without_tags.split()
    words = [t for t in tokens if not _URL_TOKEN.match(t)]
    n_links = n_tags + len(tokens) - len(words)
    return n_links > 0 and len(words) < cfg.min_words


def filter_comment(text: str, cfg: FilterConfig = DEFAULT_FILTER) -> FilterStatus:
    """Classify a normalized comment; the first matching rejection wins.

    Check order is Empty, NonEnglish, Placeholder, LinkOnly, TooShort. The
    keyword and link rules only fire when a keyword or link is present, so
    they are tested before the generic length rule.
    """
    if not text.strip():
        return FilterStatus(Reason.EMPTY)
    if not is_english(text, cfg.english_ratio):
        return FilterStatus(Reason.NON_ENGLISH)
    if _is_placeholder(text, cfg):
        return FilterStatus(Reason.PLACEHOLDER)
    if _is_link_only(text, cfg):
        return FilterStatus(Reason.LINK_ONLY)
    if word_count(text) < cfg.min_words:
        return FilterStatus(Reason.TOO_SHORT)
    return KEPT


def apply_filters(corpus: Corpus, cfg: FilterConfig = DEFAULT_FILTER) -> Corpus:
    entries = tuple(
        replace(c, filter_status=filter_comment(c.comment_norm, cfg)) for c in corpus
    )
    return replace(corpus, entries=entries)


def filter_report(corpus: Corpus) -> str:
    """One ``<id>\\t<reason>`` line per rejected case."""
    return "".join(
        f"{c.id}\t{c.filter_status.reason.value}\n" for c in corpus if not c.kept
    )


# -- storage -----------------------------------------------------------------

_CASE_FIELDS = {f for f in TestCase.__dataclass_fields__}
_ASSERTION_FIELDS = set(Assertion.__dataclass_fields__)
_MUT_FIELDS = set(MethodUnderTest.__dataclass_fields__)
_META_KEY = "_meta"


def _case_to_dict(case: TestCase) -> dict:
    d = asdict(case)
    d["assertions"] = [
        {**asdict(a), "api": a.api.value} for a in case.assertions
    ]
    d["filter_status"] = str(case.filter_status)
    return d


def _check_keys(obj: dict, allowed: set[str], what: str, lineno: int) -> None:
    unknown = set(obj) - allowed
    missing = allowed - set(obj)
    if unknown:
        raise CorpusFormatError(lineno, f"unknown {what} field(s) {sorted(unknown)}")
    if missing:
        raise CorpusFormatError(lineno, f"missing {what} field(s) {sorted(missing)}")


def _case_from_dict(d: dict, lineno: int) -> TestCase:
    _check_keys(d, _CASE_FIELDS, "test case", lineno)
    try:
        assertions = []
        for a in d["assertions"]:
            _check_keys(a, _ASSERTION_FIELDS, "assertion", lineno)
            assertions.append(Assertion(**{**a, "api": Api(a["api"])}))
        muts = []
        for m in d["muts"]:
            _check_keys(m, _MUT_FIELDS, "mut", lineno)
            muts.append(MethodUnderTest(**m))
        return TestCase(
            **{
                **d,
                "assertions": tuple(assertions),
                "muts": tuple(muts),
                "filter_status": FilterStatus.parse(d["filter_status"]),
            }
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CorpusFormatError):
            raise
        raise CorpusFormatError(lineno, str(exc)) from exc


def dump_case(case: TestCase) -> str:
    return json.dumps(_case_to_dict(case), ensure_ascii=False)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    meta = {
        "source_name": corpus.meta.source_name,
        "created_at": corpus.meta.created_at.isoformat(),
        "tool_version": corpus.meta.tool_version,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({_META_KEY: meta}, ensure_ascii=False) + "\n")
        for case in corpus:
            fh.write(dump_case(case) + "\n")


def iter_json_lines(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(lineno, f"malformed record: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise CorpusFormatError(lineno, "record is not an object")
            yield lineno, obj


def load_corpus(path: str | Path) -> Corpus:
    meta = CorpusMeta()
    entries: list[TestCase] = []
    seen: set[str] = set()
    for lineno, obj in iter_json_lines(path):
        if _META_KEY in obj:
            if entries or len(obj) != 1:
                raise CorpusFormatError(lineno, "metadata record must come first")
            m = obj[_META_KEY]
            try:
                meta = CorpusMeta(
                    source_name=m["source_name"],
                    created_at=datetime.fromisoformat(m["created_at"]),
                    tool_version=m["tool_version"],
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise CorpusFormatError(lineno, f"bad metadata: {exc}") from exc
            continue
        case = _case_from_dict(obj, lineno)
        if case.id in seen:
            raise DuplicateIdError(case.id, lineno)
        seen.add(case.id)
        entries.append(case)
    return Corpus(tuple(entries), meta)
