"""Rewrite tests/golden/ from tests/fixtures/golden_cases.l.

Run only after an intentional template change:  python3 tests/regen_golden.py
"""

from pathlib import Path

from testsum.corpus import load_corpus
from testsum.promptkit import Variant, build_summary_prompt

HERE = Path(__file__).parent


def golden_path(case_id: str, variant: Variant) -> Path:
    return HERE / "golden" / case_id.replace("/", "_").replace("#", "__") / f"{variant.value}.txt"


def main() -> None:
    for case in load_corpus(HERE / "fixtures" / "golden_cases.l"):
        for variant in Variant:
            path = golden_path(case.id, variant)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(build_summary_prompt(case, variant).text.encode("utf-8"))
            print(path.relative_to(HERE))


if __name__ == "__main__":
    main()
