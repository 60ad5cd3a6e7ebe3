"""Reference-based summary metrics: smoothed sentence BLEU-4, ROUGE-L, METEOR
(exact match, optional stemming) and greedy-matching BERTScore. All scores
are reported on a 0-100 scale."""

from __future__ import annotations

import hashlib
import json
import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from testsum.promptkit import Variant

Tokens = Sequence[str]
Embedder = Callable[[Sequence[str]], np.ndarray]

METRIC_FIELDS = ("bleu", "meteor", "rouge_l", "bertscore_f1", "judge")


class MetricError(ValueError):
    pass


class EmptyReference(MetricError):
    pass


class EmptyInput(MetricError):
    pass


class EmptyGroup(MetricError):
    pass


@dataclass(frozen=True)
class MetricConfig:
    bleu_max_n: int = 4
    bleu_smoothing: str = "AddOneOnHigherOrders"
    meteor_alpha: float = 0.9
    meteor_beta: float = 3.0
    meteor_gamma: float = 0.5
    rouge_beta: float = 1.0
    stemming: bool = False
    exact_alignment_limit: int = 12

    def __post_init__(self):
        if self.bleu_max_n < 1:
            raise ValueError("bleu_max_n must be >= 1")
        for name in ("meteor_alpha", "meteor_beta", "meteor_gamma", "rouge_beta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.bleu_smoothing != "AddOneOnHigherOrders":
            raise ValueError(f"unsupported smoothing {self.bleu_smoothing!r}")

    @property
    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


DEFAULT_CONFIG = MetricConfig()

_SPLIT = re.compile(r"[\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on runs of non-alphanumerics, drop empties."""
    return [t for t in _SPLIT.split(text.lower()) if t]


def _check_reference(reference: Tokens) -> None:
    if len(reference) == 0:
        raise EmptyReference("reference has no tokens")


# -- BLEU ---------------------------------------------------------------------

def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: Tokens, reference: Tokens, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    """Sentence BLEU with add-one smoothing on orders >= 2 and brevity penalty."""
    _check_reference(reference)
    c, r = len(candidate), len(reference)
    if c == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, cfg.bleu_max_n + 1):
        cand, ref = _ngrams(candidate, n), _ngrams(reference, n)
        matched = sum(min(k, ref[g]) for g, k in cand.items())
        total = max(c - n + 1, 0)
        if n == 1:
            if matched == 0:
                return 0.0
            p = matched / total
        else:
            p = (matched + 1) / (total + 1)
        log_sum += math.log(p)
    bp = math.exp(1 - r / c) if c < r else 1.0
    return 100.0 * bp * math.exp(log_sum / cfg.bleu_max_n)


# -- ROUGE-L ------------------------------------------------------------------

def lcs_length(a: Tokens, b: Tokens) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Tokens, reference: Tokens, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    _check_reference(reference)
    if not candidate:
        return 0.0
    lcs = lcs_length(candidate, reference)
    p, r = lcs / len(candidate), lcs / len(reference)
    b2 = cfg.rouge_beta ** 2
    denom = r + b2 * p
    if p + r == 0 or denom == 0:
        return 0.0
    return 100.0 * (1 + b2) * p * r / denom


# -- METEOR -------------------------------------------------------------------

def _stem_all(tokens: Tokens) -> list[str]:
    try:
        from nltk.stem import PorterStemmer
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise ImportError("METEOR stemming needs nltk (pip install 'artifact[stem]')") from exc
    stemmer = PorterStemmer()
    return [stemmer.stem(t) for t in tokens]


def _count_chunks(pairs: Iterable[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in sorted(pairs):
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def _exact_alignment(cand: Sequence[str], ref: Sequence[str], m: int) -> int:
    """Fewest chunks over all one-to-one alignments with ``m`` matches.

    Depth-first over candidate positions with branch-and-bound. Every token
    type must reach ``min(count_cand, count_ref)`` matches, so a candidate
    token may only be skipped when enough later copies remain; continuing the
    current chunk is tried first and visited states are memoized.
    """
    positions: dict[str, list[int]] = {}
    for j, tok in enumerate(ref):
        positions.setdefault(tok, []).append(j)
    cc, rc = Counter(cand), Counter(ref)
    need = {t: min(cc[t], rc[t]) for t in cc}
    # later[i] = occurrences of cand[i]'s type at positions > i
    later = [sum(1 for t in cand[i + 1 :] if t == cand[i]) for i in range(len(cand))]
    best = [m + 1]
    seen: dict[tuple[int, int, int], int] = {}

    def dfs(i: int, used: int, chunks: int, prev_j: int) -> None:
        if chunks >= best[0] or best[0] == 1:
            return
        if i == len(cand):
            if all(v == 0 for v in need.values()):
                best[0] = chunks
            return
        state = (i, used, prev_j)
        if seen.get(state, best[0] + 1) <= chunks:
            return
        seen[state] = chunks
        tok = cand[i]
        if need.get(tok, 0) > 0:
            options = positions[tok]
            nxt = prev_j + 1
            ordered = ([nxt] if nxt in options else []) + [j for j in options if j != nxt]
            need[tok] -= 1
            for j in ordered:
                if used >> j & 1:
                    continue
                dfs(i + 1, used | (1 << j), chunks + (0 if j == nxt else 1), j)
            need[tok] += 1
        if need.get(tok, 0) <= later[i]:
            dfs(i + 1, used, chunks, -2)

    dfs(0, 0, 0, -2)
    return best[0]


def _greedy_alignment(cand: Sequence[str], ref: Sequence[str]) -> tuple[int, int]:
    """Repeatedly align the longest run common to the unaligned positions,
    leftmost in the candidate first."""
    ca = [False] * len(cand)
    ra = [False] * len(ref)
    pairs = []
    while True:
        best = (0, 0, 0)  # length, i, j
        for i in range(len(cand)):
            if ca[i]:
                continue
            for j in range(len(ref)):
                k = 0
                while (i + k < len(cand) and j + k < len(ref) and not ca[i + k]
                       and not ra[j + k] and cand[i + k] == ref[j + k]):
                    k += 1
                if k > best[0]:
                    best = (k, i, j)
        k, i, j = best
        if k == 0:
            break
        for d in range(k):
            ca[i + d] = ra[j + d] = True
            pairs.append((i + d, j + d))
    return len(pairs), _count_chunks(pairs)


def meteor_alignment(candidate: Tokens, reference: Tokens,
                     cfg: MetricConfig = DEFAULT_CONFIG) -> tuple[int, int]:
    """(matches, chunks) for the chunk-minimizing maximum alignment."""
    cand, ref = list(candidate), list(reference)
    if cfg.stemming:
        cand, ref = _stem_all(cand), _stem_all(ref)
    rc = Counter(ref)
    m = sum(min(k, rc[t]) for t, k in Counter(cand).items())
    if m == 0:
        return 0, 0
    if m <= cfg.exact_alignment_limit:
        return m, _exact_alignment(cand, ref, m)
    return _greedy_alignment(cand, ref)


def meteor(candidate: Tokens, reference: Tokens, cfg: MetricConfig = DEFAULT_CONFIG) -> float:
    _check_reference(reference)
    if not candidate:
        return 0.0
    m, chunks = meteor_alignment(candidate, reference, cfg)
    if m == 0:
        return 0.0
    p, r = m / len(candidate), m / len(reference)
    a = cfg.meteor_alpha
    fmean = p * r / (a * p + (1 - a) * r)
    penalty = cfg.meteor_gamma * (chunks / m) ** cfg.meteor_beta
    return 100.0 * fmean * (1 - penalty)


# -- BERTScore ----------------------------------------------------------------

def bertscore(candidate: Tokens, reference: Tokens, embedder: Embedder) -> tuple[float, float, float]:
    """Greedy-matching precision, recall and F1 over token embeddings
    (no idf weighting, no baseline rescaling)."""
    if not candidate or not reference:
        raise EmptyInput("bertscore needs non-empty candidate and reference")
    c = np.asarray(embedder(list(candidate)), dtype=float)
    r = np.asarray(embedder(list(reference)), dtype=float)
    c = c / np.linalg.norm(c, axis=1, keepdims=True)
    r = r / np.linalg.norm(r, axis=1, keepdims=True)
    sim = c @ r.T
    p = float(sim.max(axis=1).mean())
    rec = float(sim.max(axis=0).mean())
    f = 0.0 if p + rec == 0 else 2 * p * rec / (p + rec)
    return 100.0 * p, 100.0 * rec, 100.0 * f


# -- records and aggregation ------------------------------------------------------

@dataclass(frozen=True)
class ScoreRecord:
    case_id: str
    model_id: str
    variant: Variant
    bleu: float
    meteor: float
    rouge_l: float
    bertscore_f1: float
    judge: float

    def __post_init__(self):
        for name in ("bleu", "meteor", "rouge_l", "bertscore_f1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0 + 1e-9:
                raise ValueError(f"{name}={v} outside [0, 100]")
        if not 1.0 <= self.judge <= 5.0:
            raise ValueError(f"judge={self.judge} outside [1, 5]")

    def to_json(self) -> str:
        d = asdict(self)
        d["variant"] = self.variant.value
        return json.dumps(d, ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "ScoreRecord":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown score fields {sorted(unknown)}")
        return cls(**{**d, "variant": Variant.parse(d["variant"])})


def score_pair(candidate: str, reference: str, cfg: MetricConfig = DEFAULT_CONFIG,
               embedder: Embedder | None = None) -> dict[str, float]:
    cand, ref = tokenize(candidate), tokenize(reference)
    scores = {
        "bleu": bleu4(cand, ref, cfg),
        "meteor": meteor(cand, ref, cfg),
        "rouge_l": rouge_l(cand, ref, cfg),
    }
    if embedder is not None:
        scores["bertscore_f1"] = bertscore(cand, ref, embedder)[2] if cand else 0.0
    return scores


@dataclass(frozen=True)
class AggregateRow:
    model_id: str
    variant: Variant
    n: int
    bleu: float
    meteor: float
    rouge_l: float
    bertscore_f1: float
    judge: float

    def values(self) -> tuple[float, ...]:
        return tuple(getattr(self, f) for f in METRIC_FIELDS)


def aggregate(records: Sequence[ScoreRecord], models: Sequence[str] | None = None,
              variants: Sequence[Variant] | None = None) -> list[AggregateRow]:
    """Per (model, variant) means rounded to 2 decimals, ordered by model then
    variant. Models default to first-appearance order."""
    groups: dict[tuple[str, Variant], list[ScoreRecord]] = {}
    for rec in records:
        groups.setdefault((rec.model_id, rec.variant), []).append(rec)
    if models is None:
        models = list(dict.fromkeys(r.model_id for r in records))
    if variants is None:
        present = {r.variant for r in records}
        variants = [v for v in Variant if v in present]
    else:
        variants = sorted(variants, key=list(Variant).index)
    rows = []
    for model in models:
        for variant in variants:
            group = groups.get((model, variant))
            if not group:
                raise EmptyGroup(f"no records for ({model}, {variant.value})")
            means = {f: round(sum(getattr(r, f) for r in group) / len(group), 2)
                     for f in METRIC_FIELDS}
            rows.append(AggregateRow(model, variant, len(group), **means))
    return rows
