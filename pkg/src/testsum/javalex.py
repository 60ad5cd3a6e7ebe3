"""Token-level helpers for scanning Java source without a full parser.

The central trick is :func:`scan`, which produces a *masked* copy of the
source with every comment and the contents of every string/char literal
replaced by spaces. Offsets are preserved, so structural searches (braces,
parentheses, commas, annotations) run on the mask and slices are taken from
the original text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

_PAIRS = {"(": ")", "[": "]", "{": "}"}


@dataclass(frozen=True)
class Span:
    start: int
    end: int  # exclusive
    kind: str  # "line", "block", "string", "char"


@dataclass(frozen=True)
class Scan:
    text: str
    masked: str
    comments: tuple[Span, ...]
    literals: tuple[Span, ...]


def _blank(chars: list[str], start: int, end: int) -> None:
    for i in range(start, end):
        if chars[i] != "\n":
            chars[i] = " "


def scan(text: str) -> Scan:
    chars = list(text)
    comments: list[Span] = []
    literals: list[Span] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "/" and text.startswith("//", i):
            end = text.find("\n", i)
            end = n if end < 0 else end
            comments.append(Span(i, end, "line"))
            _blank(chars, i, end)
            i = end
        elif c == "/" and text.startswith("/*", i):
            end = text.find("*/", i + 2)
            end = n if end < 0 else end + 2
            comments.append(Span(i, end, "block"))
            _blank(chars, i, end)
            i = end
        elif c == '"' and text.startswith('"""', i):
            end = text.find('"""', i + 3)
            end = n if end < 0 else end + 3
            literals.append(Span(i, end, "string"))
            _blank(chars, i + 3, max(i + 3, end - 3))
            i = end
        elif c in "\"'":
            j = i + 1
            while j < n and text[j] != c and text[j] != "\n":
                j += 2 if text[j] == "\\" else 1
            end = min(j + 1, n)
            literals.append(Span(i, end, "string" if c == '"' else "char"))
            _blank(chars, i + 1, max(i + 1, end - 1))
            i = end
        else:
            i += 1
    return Scan(text, "".join(chars), tuple(comments), tuple(literals))


def find_matching(masked: str, open_idx: int) -> int:
    """Index of the bracket closing the one at ``open_idx``, or -1."""
    opener = masked[open_idx]
    closer = _PAIRS[opener]
    depth = 0
    for i in range(open_idx, len(masked)):
        ch = masked[i]
        if ch == opener:
            depth += 1
        elif ch == closer:
            depth -= 1
            if depth == 0:
                return i
    return -1


_GENERIC_OPEN = re.compile(r"(?:\b[A-Z]\w*|\.)$")


def split_args(masked: str, open_idx: int, close_idx: int) -> list[tuple[int, int]]:
    """Top-level argument spans (trimmed) between a pair of parentheses.

    Angle brackets count as nesting only when they look like generics, i.e.
    ``<`` directly after a capitalized type name or a ``.`` (``Foo.<T>bar``)
    or as a diamond ``<>``.
    """
    spans: list[tuple[int, int]] = []
    depth = 0
    angle = 0
    start = open_idx + 1
    i = start
    while i < close_idx:
        ch = masked[i]
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        elif ch == "<" and (
            masked.startswith("<>", i) or _GENERIC_OPEN.search(masked, 0, i)
        ) and not masked.startswith("<<", i) and not masked.startswith("<=", i):
            angle += 1
        elif ch == ">" and angle and not masked.startswith(">=", i):
            angle -= 1
        elif ch == "," and depth == 0 and angle == 0:
            spans.append((start, i))
            start = i + 1
        i += 1
    spans.append((start, close_idx))
    out = []
    for s, e in spans:
        seg = masked[s:e]
        lead = len(seg) - len(seg.lstrip())
        trail = len(seg) - len(seg.rstrip())
        out.append((s + lead, e - trail))
    if len(out) == 1 and out[0][0] >= out[0][1]:
        return []
    return out


_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "b": "\b", "f": "\f", "0": "\0",
            "s": " ", '"': '"', "'": "'", "\\": "\\"}


def string_literal_value(expr: str) -> str | None:
    """Value of a single Java string literal (or ``+``-joined literals), else None."""
    parts = []
    sc = scan(expr)
    rest = sc.masked
    for lit in sc.literals:
        if lit.kind != "string" or expr.startswith('"""', lit.start):
            return None
        rest = rest[: lit.start] + " " * (lit.end - lit.start) + rest[lit.end:]
        parts.append(expr[lit.start + 1 : lit.end - 1])
    if not parts or rest.replace("+", "").strip():
        return None
    return "".join(_unescape(p) for p in parts)


def _unescape(body: str) -> str:
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            if nxt == "u":
                m = re.match(r"u+([0-9a-fA-F]{4})", body[i + 1 :])
                if m:
                    out.append(chr(int(m.group(1), 16)))
                    i += 1 + m.end()
                    continue
            out.append(_ESCAPES.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def statement_boundary(masked: str, pos: int) -> int:
    """Offset just after the previous ``;``, ``{`` or ``}`` before ``pos``."""
    for i in range(pos - 1, -1, -1):
        if masked[i] in ";{}":
            return i + 1
    return 0


JAVA_KEYWORDS = frozenset(
    """abstract assert boolean break byte case catch char class const continue
    default do double else enum extends final finally float for goto if
    implements import instanceof int interface long native new package private
    protected public return short static strictfp super switch synchronized this
    throw throws transient try void volatile while var record yield""".split()
)
