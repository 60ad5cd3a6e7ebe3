"""Slow reference implementations used to cross-check the metrics module.

They share no code with ``testsum.metrics`` and favor obviousness over speed.
"""

from __future__ import annotations

import math
from functools import lru_cache


def ngram_list(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def clipped_matches(cand, ref, n):
    # match each candidate n-gram occurrence to a distinct unused reference occurrence
    pool = ngram_list(ref, n)
    used = [False] * len(pool)
    hits = 0
    for g in ngram_list(cand, n):
        for k, h in enumerate(pool):
            if not used[k] and h == g:
                used[k] = True
                hits += 1
                break
    return hits


def bleu_oracle(cand, ref):
    if not cand:
        return 0.0
    precisions = []
    for n in range(1, 5):
        hits = clipped_matches(cand, ref, n)
        total = len(ngram_list(cand, n))
        if n == 1:
            if hits == 0:
                return 0.0
            precisions.append(hits / total)
        else:
            precisions.append((hits + 1) / (total + 1))
    geo = math.prod(precisions) ** 0.25
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * geo


def lcs_oracle(a, b):
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def rouge_oracle(cand, ref):
    lcs = lcs_oracle(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)


def all_alignments(cand, ref):
    """Every one-to-one exact-match alignment as a sorted list of (i, j) pairs."""
    out = []

    def go(i, used, pairs):
        if i == len(cand):
            out.append(list(pairs))
            return
        go(i + 1, used, pairs)
        for j, tok in enumerate(ref):
            if tok == cand[i] and j not in used:
                go(i + 1, used | {j}, pairs + [(i, j)])

    go(0, frozenset(), [])
    return out


def chunks_of(pairs):
    chunks = 0
    for k, (i, j) in enumerate(pairs):
        if k == 0 or (i, j) != (pairs[k - 1][0] + 1, pairs[k - 1][1] + 1):
            chunks += 1
    return chunks


def meteor_oracle(cand, ref, alpha=0.9, beta=3.0, gamma=0.5):
    alignments = all_alignments(cand, ref)
    m = max(len(a) for a in alignments)
    if m == 0:
        return 0.0
    ch = min(chunks_of(a) for a in alignments if len(a) == m)
    p, r = m / len(cand), m / len(ref)
    fmean = p * r / (alpha * p + (1 - alpha) * r)
    return fmean * (1 - gamma * (ch / m) ** beta)
