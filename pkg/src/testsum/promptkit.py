"""Prompt construction for the seven ablation variants, assertion semantics and
the LLM judge, plus judge-reply parsing."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum

from testsum.corpus import Assertion, TestCase
from testsum.extractor import strip_assertion_messages, strip_messages_and_dead_locals


class Variant(str, Enum):
    """Prompt variants in reporting order."""

    TEST_ONLY = "TestOnly"
    WITH_ASSERT_MSG = "WithAssertMsg"
    WITHOUT_ASSERT_MSG = "WithoutAssertMsg"
    WITH_SEMANTICS = "WithSemantics"
    WITH_MSG_AND_SEMANTICS = "WithMsgAndSemantics"
    WITH_MUT = "WithMut"
    WITH_MSG_MUT_SEMANTICS = "WithMsgMutSemantics"

    @property
    def label(self) -> str:
        return VARIANT_LABELS[self]

    @classmethod
    def parse(cls, name: str) -> "Variant":
        for v in cls:
            if name in (v.value, v.name, v.label):
                return v
        raise ValueError(f"unknown variant {name!r}")


VARIANT_LABELS = {
    Variant.TEST_ONLY: "Test method only",
    Variant.WITH_ASSERT_MSG: "Test method with assert msg",
    Variant.WITHOUT_ASSERT_MSG: "Test method without assert msg",
    Variant.WITH_SEMANTICS: "Test method with semantics",
    Variant.WITH_MSG_AND_SEMANTICS: "Test method with assert msg, semantics",
    Variant.WITH_MUT: "Test method with mut",
    Variant.WITH_MSG_MUT_SEMANTICS: "Test method with assert msg, mut, semantics",
}


class Block(str, Enum):
    CODE = "CODE"
    ASSERTIONS = "ASSERTIONS"
    MUTS = "MUTS"


@dataclass(frozen=True)
class _Recipe:
    strip_code: bool
    messages: bool
    semantics: bool
    muts: bool

    @property
    def blocks(self) -> frozenset[Block]:
        blocks = {Block.CODE}
        if self.messages or self.semantics:
            blocks.add(Block.ASSERTIONS)
        if self.muts:
            blocks.add(Block.MUTS)
        return frozenset(blocks)


# WithoutAssertMsg, WithSemantics and WithMut present the code with assertion
# messages removed; the other variants keep the original source.
_RECIPES = {
    Variant.TEST_ONLY: _Recipe(False, False, False, False),
    Variant.WITH_ASSERT_MSG: _Recipe(False, True, False, False),
    Variant.WITHOUT_ASSERT_MSG: _Recipe(True, False, False, False),
    Variant.WITH_SEMANTICS: _Recipe(True, False, True, False),
    Variant.WITH_MSG_AND_SEMANTICS: _Recipe(False, True, True, False),
    Variant.WITH_MUT: _Recipe(True, False, False, True),
    Variant.WITH_MSG_MUT_SEMANTICS: _Recipe(False, True, True, True),
}

SEMANTIC_VARIANTS = frozenset(v for v, r in _RECIPES.items() if r.semantics)


def included_blocks(variant: Variant) -> frozenset[Block]:
    return _RECIPES[variant].blocks


@dataclass(frozen=True)
class PromptBundle:
    case_id: str
    variant: Variant
    text: str
    included_blocks: frozenset[Block]

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


class PromptError(ValueError):
    pass


class MissingSemantics(PromptError):
    def __init__(self, case_id: str):
        super().__init__(f"case {case_id!r}: an assertion has no generated semantic")
        self.case_id = case_id


ROLE = (
    "Role: You are a senior Java test engineer focused on summarizing unit-test "
    "behavior and expected outcomes."
)
INSTRUCTION = (
    "Instruction:\n"
    "Your task is to analyze the provided test code and generate a short summary comment."
)
CONNECTIVE = (
    "Please find more information about assertions in [ASSERTIONS][/ASSERTIONS] "
    "and methods under test in [MUTS][/MUTS]"
)
CLOSING = (
    "Please generate a short summary comment in one sentence for the test code.\n"
    "Please do not use more than 20 words."
)
SUMMARY_SCAFFOLD = "[SUMMARY]\n[/SUMMARY]"
NO_MUT_PLACEHOLDER = "// no method under test resolved"


def _block(tag: str, body: str) -> str:
    return f"[{tag}]\n{body}\n[/{tag}]" if body else f"[{tag}]\n[/{tag}]"


def _assertion_line(a: Assertion, recipe: _Recipe) -> str:
    statement = strip_assertion_messages(a.statement) if recipe.strip_code else a.statement
    parts = [statement]
    if recipe.messages and a.message is not None:
        parts.append(f"// message: {a.message}")
    if recipe.semantics:
        parts.append(f"// meaning: {a.semantic}")
    return "  ".join(parts)


def build_summary_prompt(case: TestCase, variant: Variant) -> PromptBundle:
    recipe = _RECIPES[variant]
    if recipe.semantics and any(not a.semantic for a in case.assertions):
        raise MissingSemantics(case.id)

    code = strip_messages_and_dead_locals(case.test_source) if recipe.strip_code else case.test_source
    sections = [ROLE, INSTRUCTION, _block("CODE", code)]
    blocks = recipe.blocks
    if len(blocks) > 1:
        sections.append(CONNECTIVE)
    if Block.ASSERTIONS in blocks:
        lines = "\n".join(_assertion_line(a, recipe) for a in case.assertions)
        sections.append(_block("ASSERTIONS", lines))
    if Block.MUTS in blocks:
        body = "\n\n".join(m.body for m in case.muts) or NO_MUT_PLACEHOLDER
        sections.append(_block("MUTS", body))
    sections += [CLOSING, SUMMARY_SCAFFOLD]
    return PromptBundle(case.id, variant, "\n\n".join(sections) + "\n", blocks)


def extract_summary(reply: str) -> str:
    """The generated comment: text inside ``[SUMMARY]`` tags if echoed, else the
    first non-empty line, with comment markers and quotes trimmed."""
    m = re.search(r"\[SUMMARY\](.*?)(?:\[/SUMMARY\]|$)", reply, re.DOTALL)
    text = m.group(1) if m and m.group(1).strip() else reply
    line = next((ln.strip() for ln in text.splitlines() if ln.strip()), "")
    line = re.sub(r"^(?:/\*+|//+|\*+)\s*|\s*\*+/$", "", line)
    return line.strip().strip('"').strip()


# -- assertion semantics -------------------------------------------------------

SEMANTICS_PROMPT_VERSION = "1"
_SEMANTICS_HEAD = (
    "You are a senior Java test engineer.\n"
    "Describe, in ONE concise natural-language sentence, what the following JUnit "
    "assertion verifies or why it might fail.\n"
    "Start the sentence with a verb such as \"Checks\" and do not restate the code.\n"
    "Example: for assertThat(\"Invalid age\", user.getAge(), is(equalTo(18))); "
    "answer: Checks that the user's age equals 18."
)


def build_semantics_prompt(assertion: Assertion | str) -> str:
    statement = assertion.statement if isinstance(assertion, Assertion) else assertion
    if not statement.strip():
        raise PromptError("empty assertion statement")
    return f"{_SEMANTICS_HEAD}\n\n[ASSERTION]\n{statement}\n[/ASSERTION]\n"


def clean_semantic(reply: str) -> str:
    """First sentence of a semantics reply."""
    text = " ".join(reply.split())
    text = re.sub(r"^(?:answer|meaning)\s*:\s*", "", text, flags=re.IGNORECASE)
    m = re.match(r"(.+?[.!?])(?:\s|$)", text)
    sentence = m.group(1) if m else text
    if sentence and sentence[-1] not in ".!?":
        sentence += "."
    return sentence


# -- judge ----------------------------------------------------------------------

JUDGE_HEAD = (
    "Here is a piece of Java unit-test code and ONE comment. Please rate the comment "
    "on a scale from 1 to 5, where a higher score indicates better quality."
)
JUDGE_CRITERIA = (
    "1) Accurately states what behavior is verified and under which conditions.",
    "2) Reflects the expected outcomes expressed by the assertions (values, state "
    "changes, exceptions).",
    "3) Identifies the method, class, feature, or scenario under test.",
    "4) Mentions edge cases, negative paths, exceptions, or side effects when "
    "applicable (no penalty if not applicable).",
    "5) Is expressed naturally and concisely, without burdening the developer with reading.",
    "6) Helps the developer understand the code quickly.",
)
JUDGE_FORMAT = (
    "Return ONE line ONLY in the exact format:\n"
    "Score: X\n"
    "(where X is a number from 1 to 5, integer or decimal)."
)


def build_judge_prompt(code: str, comment: str) -> str:
    if not code.strip() or not comment.strip():
        raise PromptError("judge prompt needs both code and comment")
    rubric = "Consider the following:\n" + "\n".join(JUDGE_CRITERIA)
    # plain concatenation: braces or "Score:" inside the inputs stay literal
    return (
        JUDGE_HEAD + "\n\n" + rubric + "\n\n" + JUDGE_FORMAT + "\n\n"
        + "Code: " + code + "\n\n" + "Comment: " + comment + "\n"
    )


class JudgeReplyError(ValueError):
    pass


class NoScoreFound(JudgeReplyError):
    pass


class OutOfRange(JudgeReplyError):
    def __init__(self, value: float):
        super().__init__(f"judge score {value} outside [1, 5]")
        self.value = value


_SCORE_LINE = re.compile(r"Score\s*:\s*\**\s*([-+]?\d+(?:\.\d+)?)", re.IGNORECASE)


def parse_judge_reply(reply: str) -> float:
    for line in reply.splitlines():
        m = _SCORE_LINE.search(line)
        if m:
            value = float(m.group(1))
            if not 1.0 <= value <= 5.0:
                raise OutOfRange(value)
            return value
    raise NoScoreFound(f"no 'Score: X' line in reply {reply[:80]!r}")


def prompt_hash(*texts: str) -> str:
    h = hashlib.sha256()
    for t in texts:
        h.update(t.encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()[:16]
