"""JUnit 4 test extraction: test-file detection, test methods with their leading
comments, assertions and messages, message stripping, and method-under-test
resolution against a paired production file.

Parsing is heuristic and token-level (see :mod:`testsum.javalex`); nothing
here needs the sources to compile.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path, PurePosixPath
from typing import NamedTuple

from testsum import __version__
from testsum.corpus import (
    Api,
    Assertion,
    Corpus,
    CorpusMeta,
    FilterConfig,
    MethodUnderTest,
    TestCase,
    filter_comment,
    normalize_comment,
)
from testsum.javalex import (
    JAVA_KEYWORDS,
    find_matching,
    scan,
    split_args,
    statement_boundary,
    string_literal_value,
)

log = logging.getLogger(__name__)


class Kind(str, Enum):
    TEST = "Test"
    PRODUCTION = "Production"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class SourceFile:
    path: str
    text: str
    kind: Kind = Kind.UNKNOWN

    @classmethod
    def read(cls, path: str | Path, rel: str | None = None) -> "SourceFile":
        text = Path(path).read_text(encoding="utf-8", errors="replace")
        kind = Kind.TEST if detect_test_file(text) else Kind.PRODUCTION
        return cls(rel if rel is not None else str(path), text, kind)


@dataclass(frozen=True)
class AssertionSignature:
    api: Api
    arity_with_message: int
    message_arg_index: int = 0


def _sigs(api: Api, *arities: int) -> tuple[AssertionSignature, ...]:
    return tuple(AssertionSignature(api, n) for n in arities)


# JUnit 4 / Hamcrest: the message always comes first.
SIGNATURES: dict[str, tuple[AssertionSignature, ...]] = {
    "assertEquals": _sigs(Api.ASSERT_EQUALS, 3, 4),
    "assertNotEquals": _sigs(Api.OTHER, 3, 4),
    "assertArrayEquals": _sigs(Api.ASSERT_ARRAY_EQUALS, 3, 4),
    "assertTrue": _sigs(Api.ASSERT_TRUE, 2),
    "assertFalse": _sigs(Api.ASSERT_FALSE, 2),
    "assertNull": _sigs(Api.ASSERT_NULL, 2),
    "assertNotNull": _sigs(Api.ASSERT_NOT_NULL, 2),
    "assertSame": _sigs(Api.ASSERT_SAME, 3),
    "assertNotSame": _sigs(Api.ASSERT_NOT_SAME, 3),
    "assertThat": _sigs(Api.ASSERT_THAT, 3),
    "fail": _sigs(Api.FAIL, 1),
}

# (expected, actual, delta) has the same arity as (message, expected, actual)
_DELTA_OVERLOADS = {"assertEquals", "assertNotEquals", "assertArrayEquals"}


class ExtractionError(Exception):
    pass


class UnbalancedBraces(ExtractionError):
    def __init__(self, method_name: str):
        super().__init__(f"method {method_name!r}: body never closes")
        self.method_name = method_name


class RewriteFailed(ExtractionError):
    def __init__(self, statement: str):
        super().__init__(f"cannot split arguments of {statement!r}")
        self.statement = statement


class ProductionParseFailed(ExtractionError):
    pass


# -- test detection and method extraction ------------------------------------

_TEST_ANNOTATION = re.compile(r"@(?:org\s*\.\s*junit\s*\.\s*)?Test\b(?![\w$.])")
_ANNOTATION = re.compile(r"@[\w$.]+")
_IDENT_CALL = re.compile(r"([A-Za-z_$][\w$]*)\s*\(")


def detect_test_file(file: SourceFile | str) -> bool:
    text = file.text if isinstance(file, SourceFile) else file
    return _TEST_ANNOTATION.search(scan(text).masked) is not None


class ExtractedMethod(NamedTuple):
    method_name: str
    method_source: str
    leading_comment_raw: str


def _skip_ws(masked: str, i: int) -> int:
    while i < len(masked) and masked[i].isspace():
        i += 1
    return i


def _skip_annotations(masked: str, i: int) -> int:
    """Advance past whitespace and any ``@Name(...)`` annotations."""
    i = _skip_ws(masked, i)
    while True:
        m = _ANNOTATION.match(masked, i)
        if not m or masked.startswith("@interface", i):
            return i
        i = _skip_ws(masked, m.end())
        if i < len(masked) and masked[i] == "(":
            close = find_matching(masked, i)
            if close < 0:
                return i
            i = _skip_ws(masked, close + 1)


def _leading_comment(sc, anno_start: int) -> str:
    text = sc.text
    lo = statement_boundary(sc.masked, anno_start)
    found = [c for c in sc.comments if c.start >= lo and c.end <= anno_start]
    if not found:
        return ""
    last = found[-1]
    line_start = text.rfind("\n", 0, last.start) + 1
    if text[line_start : last.start].strip():
        return ""  # trailing comment of some earlier line
    first = last
    if last.kind == "line":
        for prev in reversed(found[:-1]):
            gap = text[prev.end : first.start]
            if prev.kind != "line" or gap.strip() or gap.count("\n") > 1:
                break
            first = prev
    return text[first.start : last.end]


def extract_test_methods(file: SourceFile | str) -> list[ExtractedMethod]:
    """Every ``@Test`` method in source order, annotation through closing brace."""
    text = file.text if isinstance(file, SourceFile) else file
    sc = scan(text)
    masked = sc.masked
    out: list[ExtractedMethod] = []
    for m in _TEST_ANNOTATION.finditer(masked):
        start = m.start()
        header_start = _skip_annotations(masked, start)
        brace = semi = None
        i = header_start
        depth = 0
        while i < len(masked):
            ch = masked[i]
            if ch == "(":
                depth += 1
            elif ch == ")":
                depth -= 1
            elif depth == 0 and ch == "{":
                brace = i
                break
            elif depth == 0 and ch == ";":
                semi = i
                break
            i += 1
        header = masked[header_start : brace if brace is not None else i]
        name_m = next(
            (c for c in _IDENT_CALL.finditer(header) if c.group(1) not in JAVA_KEYWORDS),
            None,
        )
        name = name_m.group(1) if name_m else "<unknown>"
        if brace is None:
            if semi is None:
                raise UnbalancedBraces(name)
            continue  # abstract declaration
        close = find_matching(masked, brace)
        if close < 0:
            raise UnbalancedBraces(name)
        out.append(ExtractedMethod(name, text[start : close + 1], _leading_comment(sc, start)))
    return out


# -- assertions ---------------------------------------------------------------

_ASSERT_CALL = re.compile(
    r"(?<![\w$.])((?:[A-Za-z_$][\w$]*\s*\.\s*)*)(" + "|".join(SIGNATURES) + r")\s*\("
)
_STRING_DECL = re.compile(r"\bString\s+([A-Za-z_$][\w$]*)\s*(?=[=;,)])")
_NUMERIC = re.compile(r"[-+]?\s*(?:\d[\d_]*\.?[\d_]*|\.\d[\d_]*)(?:[eE][-+]?\d+)?[fFdDlL]?")
_DELTA_NAME = re.compile(r"delta|eps|tol|precision", re.IGNORECASE)


@dataclass(frozen=True)
class _Call:
    name: str
    start: int
    open: int
    close: int
    args: tuple[tuple[int, int], ...]
    has_message: bool


def _string_locals(text: str, masked: str) -> dict[str, str | None]:
    """Locally declared String names mapped to their literal initializer value."""
    out: dict[str, str | None] = {}
    for m in _STRING_DECL.finditer(masked):
        name = m.group(1)
        value = None
        j = _skip_ws(masked, m.end())
        if j < len(masked) and masked[j] == "=":
            end = masked.find(";", j)
            if end > 0:
                value = string_literal_value(text[j + 1 : end].strip())
        if name not in out or out[name] is None:
            out[name] = value
    return out


def _stringish(expr: str, locals_: dict[str, str | None]) -> bool:
    return '"' in expr or expr in locals_


def _looks_like_delta(expr: str) -> bool:
    return bool(_NUMERIC.fullmatch(expr) or _DELTA_NAME.search(expr))


def _has_message(name: str, args: list[str], locals_: dict[str, str | None]) -> bool:
    if not any(s.arity_with_message == len(args) for s in SIGNATURES[name]):
        return False
    if name in _DELTA_OVERLOADS and len(args) == 3:
        if _stringish(args[0], locals_):
            return True
        return not _looks_like_delta(args[2])
    return True


def _qualifier_ok(qualifier: str) -> bool:
    if not qualifier:
        return True
    last = qualifier.rstrip(" .\t\n").split(".")[-1].strip()
    return last.endswith("Assert") or last.endswith("Assertions")


def _assert_calls(text: str, strict: bool = False) -> list[_Call]:
    sc = scan(text)
    masked = sc.masked
    locals_ = _string_locals(text, masked)
    calls = []
    for m in _ASSERT_CALL.finditer(masked):
        if not _qualifier_ok(m.group(1)):
            continue
        open_idx = m.end() - 1
        close = find_matching(masked, open_idx)
        if close < 0:
            if strict:
                raise RewriteFailed(text[m.start() :].split("\n", 1)[0])
            continue
        args = split_args(masked, open_idx, close)
        arg_text = [text[s:e] for s, e in args]
        calls.append(
            _Call(m.group(2), m.start(), open_idx, close, tuple(args),
                  _has_message(m.group(2), arg_text, locals_))
        )
    return calls


def _resolve_message(expr: str, locals_: dict[str, str | None]) -> str:
    value = string_literal_value(expr)
    if value is not None:
        return value
    if locals_.get(expr) is not None:
        return locals_[expr]
    return expr


def extract_assertions(method_source: str) -> list[Assertion]:
    text = method_source
    locals_ = _string_locals(text, scan(text).masked)
    out = []
    for call in _assert_calls(text):
        api = SIGNATURES[call.name][0].api
        message = None
        if call.has_message:
            s, e = call.args[0]
            message = _resolve_message(text[s:e], locals_)
        out.append(Assertion(statement=text[call.start : call.close + 1], api=api, message=message))
    return out


def strip_assertion_messages(method_source: str) -> str:
    """Remove the message argument from every assertion call that carries one."""
    text = method_source
    cuts = []
    for call in _assert_calls(text, strict=True):
        if not call.has_message:
            continue
        if not call.args:
            raise RewriteFailed(text[call.start : call.close + 1])
        s, e = call.args[0]
        cuts.append((s, call.args[1][0] if len(call.args) > 1 else e))
    cuts.sort(reverse=True)
    kept_from = len(text) + 1
    for s, e in cuts:
        if e > kept_from:
            continue  # nested inside a message that is already gone
        text = text[:s] + text[e:]
        kept_from = s
    return text


def strip_messages_and_dead_locals(method_source: str) -> str:
    """:func:`strip_assertion_messages`, then delete local String declarations
    that only existed to feed a message argument and are now unused."""
    text = method_source
    masked = scan(text).masked
    locals_ = _string_locals(text, masked)
    names = set()
    for call in _assert_calls(text):
        if call.has_message:
            s, e = call.args[0]
            if text[s:e] in locals_:
                names.add(text[s:e])
    stripped = strip_assertion_messages(text)
    for name in sorted(names):
        masked = scan(stripped).masked
        uses = list(re.finditer(rf"(?<![\w$.]){re.escape(name)}(?![\w$])", masked))
        decl = _STRING_DECL.search(masked)
        while decl and decl.group(1) != name:
            decl = _STRING_DECL.search(masked, decl.end())
        if decl is None or len(uses) != 1:
            continue
        start = statement_boundary(masked, decl.start())
        end = masked.find(";", decl.end())
        if end < 0:
            continue
        line_start = stripped.rfind("\n", 0, decl.start()) + 1
        line_end = stripped.find("\n", end)
        if not stripped[line_start:start].strip() and not stripped[end + 1 : line_end].strip():
            start, end = line_start, line_end + 1  # drop the whole line
        else:
            end += 1
        stripped = stripped[:start] + stripped[end:]
    return stripped


# -- methods under test -------------------------------------------------------

_TYPE_DECL = re.compile(r"\b(?:class|interface|enum|record)\s+([A-Za-z_$][\w$]*)")
_THROWS = re.compile(r"\s*throws\s+[\w$.,\s<>?]+?(?=\{)")
_NOT_A_TYPE = JAVA_KEYWORDS - {
    "boolean", "byte", "char", "double", "float", "int", "long", "short", "void",
    "final", "static", "public", "private", "protected", "abstract",
    "synchronized", "native", "strictfp", "default",
}


@dataclass(frozen=True)
class MethodDecl:
    name: str
    class_name: str
    signature: str
    body: str
    start: int

    def to_mut(self) -> MethodUnderTest:
        return MethodUnderTest(f"{self.class_name}.{self.name}", self.signature, self.body)


def _class_bodies(masked: str) -> list[tuple[int, int, str]]:
    bodies = []
    for m in _TYPE_DECL.finditer(masked):
        brace = masked.find("{", m.end())
        if brace < 0:
            continue
        close = find_matching(masked, brace)
        if close > 0:
            bodies.append((brace, close, m.group(1)))
    return bodies


def _innermost_open(masked: str, pos: int) -> int:
    depth = 0
    for i in range(pos - 1, -1, -1):
        ch = masked[i]
        if ch == "}":
            depth += 1
        elif ch == "{":
            if depth == 0:
                return i
            depth -= 1
    return -1


def parse_methods(text: str) -> list[MethodDecl]:
    """Method declarations (with bodies) that are direct members of a type."""
    sc = scan(text)
    masked = sc.masked
    owners = {brace: name for brace, _, name in _class_bodies(masked)}
    decls = []
    for m in _IDENT_CALL.finditer(masked):
        name = m.group(1)
        if name in JAVA_KEYWORDS:
            continue
        before = masked[: m.start()].rstrip()
        if not before or not (before[-1].isalnum() or before[-1] in "_$>]"):
            continue
        prev_word = re.search(r"([\w$]+)$", before)
        if prev_word and prev_word.group(1) in _NOT_A_TYPE:
            continue
        close_paren = find_matching(masked, m.end() - 1)
        if close_paren < 0:
            continue
        j = close_paren + 1
        t = _THROWS.match(masked, j)
        if t:
            j = t.end()
        j = _skip_ws(masked, j)
        if j >= len(masked) or masked[j] != "{":
            continue
        owner = owners.get(_innermost_open(masked, m.start()))
        if owner is None:
            continue
        close = find_matching(masked, j)
        if close < 0:
            continue
        start = _skip_annotations(masked, statement_boundary(masked, m.start()))
        body = text[start : close + 1]
        first_line = body.split("\n", 1)[0]
        paren_in_line = close_paren - start
        signature = (
            first_line[: paren_in_line + 1] if paren_in_line < len(first_line) else first_line.rstrip()
        ).strip()
        decls.append(MethodDecl(name, owner, signature, body, start))
    return decls


def called_names(source: str) -> set[str]:
    masked = scan(source).masked
    names = set()
    for m in _IDENT_CALL.finditer(masked):
        name = m.group(1)
        if name in JAVA_KEYWORDS or re.search(r"\bnew\s+(?:[\w$]+\s*\.\s*)*$", masked[: m.start()]):
            continue
        names.add(name)
    return names


def resolve_mut(test: TestCase | str, production: SourceFile) -> list[MethodUnderTest]:
    """Production methods whose simple name is called in the test body."""
    source = test.test_source if isinstance(test, TestCase) else test
    decls = parse_methods(production.text)
    if not decls:
        raise ProductionParseFailed(f"no method declarations found in {production.path}")
    own = {e.method_name for e in extract_test_methods(source)} if "@" in source else set()
    calls = called_names(source) - own
    out: list[MethodUnderTest] = []
    seen = set()
    for d in decls:
        if d.name == d.class_name or d.name not in calls:
            continue
        key = (d.class_name, d.signature)
        if key in seen:
            continue
        seen.add(key)
        out.append(d.to_mut())
    return out


# -- file mapping -------------------------------------------------------------

def _production_stems(test_stem: str) -> list[str]:
    stems = []
    for suffix in ("Tests", "Test"):
        if test_stem.endswith(suffix) and len(test_stem) > len(suffix):
            stems.append(test_stem[: -len(suffix)])
            break
    if test_stem.startswith("Test") and len(test_stem) > 4:
        stems.append(test_stem[4:])
    return stems


def _shared_dirs(a: str, b: str) -> int:
    n = 0
    for x, y in zip(PurePosixPath(a).parent.parts, PurePosixPath(b).parent.parts):
        if x != y:
            break
        n += 1
    return n


def map_test_to_production(test_path: str, candidate_paths: list[str]) -> str | None:
    stems = _production_stems(PurePosixPath(test_path).stem)
    matches = [c for c in candidate_paths if PurePosixPath(c).stem in stems]
    if not matches:
        return None
    return min(matches, key=lambda c: (-_shared_dirs(test_path, c), c))


def load_mapping(path: str | Path) -> dict[str, str]:
    """Two-column ``test_path<TAB>production_path`` override file."""
    mapping = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two tab-separated columns")
        mapping[parts[0].strip()] = parts[1].strip()
    return mapping


# -- corpus assembly ----------------------------------------------------------

def _class_name(text: str, fallback: str) -> str:
    m = _TYPE_DECL.search(scan(text).masked)
    return m.group(1) if m else fallback


def extract_corpus(
    src_dir: str | Path,
    mapping: dict[str, str] | None = None,
    *,
    require_message: bool = True,
    filter_cfg: FilterConfig = FilterConfig(),
    created_at: datetime | None = None,
) -> Corpus:
    """Walk ``src_dir`` for ``.java`` files and build a corpus of test cases.

    With ``require_message`` only methods with at least one assertion message
    are kept, mirroring the benchmark's curation.
    """
    root = Path(src_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"source directory not found: {src_dir}")
    files = [
        SourceFile.read(p, p.relative_to(root).as_posix())
        for p in sorted(root.rglob("*.java"), key=lambda p: p.relative_to(root).as_posix())
    ]
    by_path = {f.path: f for f in files}
    production = [f.path for f in files if f.kind is Kind.PRODUCTION]
    mapping = mapping or {}

    entries: list[TestCase] = []
    ids: set[str] = set()
    for f in files:
        if f.kind is not Kind.TEST:
            continue
        prod_path = mapping.get(f.path) or map_test_to_production(f.path, production)
        prod = by_path.get(prod_path) if prod_path else None
        parts = PurePosixPath(f.path).parts
        project = parts[0] if len(parts) > 1 else root.name
        class_name = _class_name(f.text, PurePosixPath(f.path).stem)
        for method in extract_test_methods(f):
            assertions = tuple(extract_assertions(method.method_source))
            if require_message and not any(a.message is not None for a in assertions):
                continue
            case_id = f"{f.path}#{method.method_name}"
            k = 2
            while case_id in ids:
                case_id = f"{f.path}#{method.method_name}~{k}"
                k += 1
            ids.add(case_id)
            muts: tuple[MethodUnderTest, ...] = ()
            if prod is not None:
                try:
                    muts = tuple(resolve_mut(method.method_source, prod))
                except ProductionParseFailed as exc:
                    log.warning("%s: %s", case_id, exc)
            norm = normalize_comment(method.leading_comment_raw)
            entries.append(
                TestCase(
                    id=case_id,
                    project=project,
                    test_file_path=f.path,
                    test_class_name=class_name,
                    test_method_name=method.method_name,
                    test_source=method.method_source,
                    comment_raw=method.leading_comment_raw,
                    comment_norm=norm,
                    assertions=assertions,
                    muts=muts,
                    filter_status=filter_comment(norm, filter_cfg),
                )
            )
    meta = CorpusMeta(
        source_name=root.name or os.fspath(root),
        created_at=created_at or _now(),
        tool_version=__version__,
    )
    return Corpus(tuple(entries), meta)


def _now() -> datetime:
    """Wall clock, overridable through ``SOURCE_DATE_EPOCH`` for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        return datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    return datetime.now(timezone.utc).replace(microsecond=0)
