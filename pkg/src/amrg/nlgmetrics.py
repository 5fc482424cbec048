"""Report generation metrics: BLEU-1, ROUGE-1/2/L, METEOR, CIDEr-D and word F1.

All metrics take a single reference per candidate and operate on the token
lists produced by :func:`tokenize`.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Sequence

_TOKEN_RE = re.compile(r"[^\W_]+")

METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5
CIDER_SIGMA = 6.0
CIDER_MAX_N = 4


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every run of non-alphanumeric characters.

    >>> tokenize("BI-RADS 4c, spiculated mass.")
    ['bi', 'rads', '4c', 'spiculated', 'mass']
    """
    return _TOKEN_RE.findall(text.lower())


def _as_tokens(x) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def bleu1(cand, ref) -> float:
    """Clipped unigram precision times the brevity penalty, no smoothing."""
    cand, ref = _as_tokens(cand), _as_tokens(ref)
    if not cand:
        return 0.0
    ref_counts = Counter(ref)
    clipped = sum(min(c, ref_counts[w]) for w, c in Counter(cand).items())
    bp = math.exp(min(0.0, 1.0 - len(ref) / len(cand)))
    return bp * clipped / len(cand)


def rouge_n(cand, ref, n: int = 1) -> float:
    if n not in (1, 2):
        raise ValueError(f"ROUGE-N supports n in {{1, 2}}, got {n}")
    c, r = ngrams(_as_tokens(cand), n), ngrams(_as_tokens(ref), n)
    if not c or not r:
        return 0.0
    overlap = sum((c & r).values())
    return _f1(overlap / sum(c.values()), overlap / sum(r.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(cand, ref) -> float:
    """Balanced (beta = 1) LCS F-measure."""
    cand, ref = _as_tokens(cand), _as_tokens(ref)
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    return _f1(lcs / len(cand), lcs / len(ref))


def word_f1(cand, ref) -> float:
    cand, ref = _as_tokens(cand), _as_tokens(ref)
    if not cand and not ref:
        return 1.0
    if not cand or not ref:
        return 0.0
    overlap = sum((Counter(cand) & Counter(ref)).values())
    return _f1(overlap / len(cand), overlap / len(ref))


# --- METEOR -----------------------------------------------------------------

@lru_cache(maxsize=1)
def _stemmer():
    # nltk is slow to import, so load it on first use
    from nltk.stem.porter import PorterStemmer

    return PorterStemmer()


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    return _stemmer().stem(word)


def count_chunks(alignment: Sequence[tuple[int, int]]) -> int:
    """Number of runs of alignment pairs contiguous in both sequences."""
    pairs = sorted(alignment)
    chunks = 0
    for k, (i, j) in enumerate(pairs):
        if k == 0 or pairs[k - 1] != (i - 1, j - 1):
            chunks += 1
    return chunks


def _greedy_stage(cand, ref, used, alignment, key):
    """Match still-unaligned candidate tokens left to right on ``key`` equality,
    preferring to extend the previous chunk, else the leftmost free slot."""
    by_cand = dict(alignment)
    for i, w in enumerate(cand):
        if i in by_cand:
            continue
        prev = by_cand.get(i - 1)
        options = [j for j, v in enumerate(ref) if j not in used and key(v) == key(w)]
        if not options:
            continue
        j = prev + 1 if prev is not None and prev + 1 in options else options[0]
        used.add(j)
        by_cand[i] = j
    return sorted(by_cand.items())


def meteor_alignment(cand: Sequence[str], ref: Sequence[str], budget: int = 20000):
    """Word alignment used by :func:`meteor`.

    Exact matches are taken first, then Porter-stem matches among the leftovers,
    so the alignment always has the maximal number of exact matches and the
    maximal number of matches overall. Among those, the alignment with the
    fewest chunks is searched for by depth-first branch and bound, seeded with
    a greedy solution; ``budget`` caps the node count for long inputs.
    """
    used: set[int] = set()
    greedy = _greedy_stage(cand, ref, used, [], key=lambda w: w)
    greedy = _greedy_stage(cand, ref, used, greedy, key=stem)
    n_match = len(greedy)
    n_exact = sum(cand[i] == ref[j] for i, j in greedy)
    if n_match == 0:
        return []

    cstem = [stem(w) for w in cand]
    rstem = [stem(w) for w in ref]
    eligible = [
        sorted(
            (j for j in range(len(ref)) if rstem[j] == cstem[i]),
            key=lambda j: (cand[i] != ref[j], j),
        )
        for i in range(len(cand))
    ]

    best = {"chunks": count_chunks(greedy), "alignment": greedy}
    nodes = 0

    def bound_ok(i, used_mask, matched, exact):
        # optimistic completion: every remaining candidate token still matchable
        free_stem = Counter(rstem[j] for j in range(len(ref)) if not used_mask >> j & 1)
        free_word = Counter(ref[j] for j in range(len(ref)) if not used_mask >> j & 1)
        rest_stem = Counter(cstem[i:])
        rest_word = Counter(cand[i:])
        m_up = matched + sum(min(c, free_stem[s]) for s, c in rest_stem.items())
        e_up = exact + sum(min(c, free_word[w]) for w, c in rest_word.items())
        return m_up >= n_match and e_up >= n_exact

    def dfs(i, used_mask, matched, exact, chunks, prev_j, path):
        nonlocal nodes
        nodes += 1
        if chunks >= best["chunks"] or nodes > budget:
            return
        if i == len(cand):
            if matched == n_match and exact == n_exact:
                best["chunks"] = chunks
                best["alignment"] = list(path)
            return
        if not bound_ok(i, used_mask, matched, exact):
            return
        options = [j for j in eligible[i] if not used_mask >> j & 1]
        if prev_j is not None and prev_j + 1 in options:
            options.remove(prev_j + 1)
            options.insert(0, prev_j + 1)
        for j in options:
            cont = prev_j is not None and j == prev_j + 1
            path.append((i, j))
            dfs(i + 1, used_mask | (1 << j), matched + 1,
                exact + (cand[i] == ref[j]), chunks + (0 if cont else 1), j, path)
            path.pop()
        dfs(i + 1, used_mask, matched, exact, chunks, None, path)

    dfs(0, 0, 0, 0, 0, None, [])
    return best["alignment"]


def meteor(cand, ref, alpha: float = METEOR_ALPHA, beta: float = METEOR_BETA,
           gamma: float = METEOR_GAMMA) -> float:
    cand, ref = _as_tokens(cand), _as_tokens(ref)
    if not cand or not ref:
        return 0.0
    alignment = meteor_alignment(cand, ref)
    m = len(alignment)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    fmean = p * r / (alpha * p + (1 - alpha) * r)
    penalty = gamma * (count_chunks(alignment) / m) ** beta
    return fmean * (1 - penalty)


# --- CIDEr-D ----------------------------------------------------------------

def cider(cands: Sequence, refs: Sequence, sigma: float = CIDER_SIGMA,
          max_n: int = CIDER_MAX_N) -> tuple[list[float], float]:
    """CIDEr-D with one reference per candidate.

    Document frequencies come from the reference corpus. Returns the per-pair
    scores and their mean.
    """
    cands = [_as_tokens(c) for c in cands]
    refs = [_as_tokens(r) for r in refs]
    if len(cands) != len(refs):
        raise ValueError(f"{len(cands)} candidates vs {len(refs)} references")
    if len(refs) < 2:
        raise ValueError("CIDEr undefined for single-document corpus")

    log_n = math.log(len(refs))
    ref_grams = [[ngrams(r, n) for n in range(1, max_n + 1)] for r in refs]
    doc_freq: Counter = Counter()
    for grams in ref_grams:
        for counts in grams:
            doc_freq.update(counts.keys())

    def tfidf(counts: Counter) -> dict:
        return {g: tf * (log_n - math.log(max(1, doc_freq[g]))) for g, tf in counts.items()}

    scores = []
    for cand, ref, rgrams in zip(cands, refs, ref_grams):
        per_n = []
        for n in range(1, max_n + 1):
            vc, vr = tfidf(ngrams(cand, n)), tfidf(rgrams[n - 1])
            norm_c = math.sqrt(sum(v * v for v in vc.values()))
            norm_r = math.sqrt(sum(v * v for v in vr.values()))
            if norm_c == 0 or norm_r == 0:
                per_n.append(0.0)
                continue
            dot = sum(min(v, vr[g]) * vr[g] for g, v in vc.items() if g in vr)
            per_n.append(dot / (norm_c * norm_r))
        delta = len(cand) - len(ref)
        penalty = math.exp(-(delta ** 2) / (2 * sigma ** 2))
        scores.append(10.0 * penalty * sum(per_n) / max_n)
    return scores, sum(scores) / len(scores)


# --- corpus level -----------------------------------------------------------

METRIC_KEYS = ("bleu1", "rouge1", "rouge2", "rougeL", "meteor", "cider", "word_f1",
               "density_acc", "birads_acc")
METRIC_LABELS = {
    "bleu1": "BLEU-1",
    "rouge1": "ROUGE-1",
    "rouge2": "ROUGE-2",
    "rougeL": "ROUGE-L",
    "meteor": "METEOR",
    "cider": "CIDEr",
    "word_f1": "F1 (word-level)",
    "density_acc": "Density Accuracy",
    "birads_acc": "BI-RADS Accuracy",
}


@dataclass
class MetricBundle:
    bleu1: float
    rouge1: float
    rouge2: float
    rougeL: float
    meteor: float
    cider: float
    word_f1: float
    density_acc: float | None = None
    birads_acc: float | None = None

    def __post_init__(self):
        for key in METRIC_KEYS:
            value = getattr(self, key)
            if value is None:
                if key not in ("density_acc", "birads_acc"):
                    raise ValueError(f"{key} is required")
                continue
            hi = 10.0 if key == "cider" else 1.0
            if not -1e-12 <= value <= hi + 1e-12:
                raise ValueError(f"{key}={value} outside [0, {hi}]")

    def to_json(self) -> dict:
        return asdict(self)


PAIR_METRICS = {
    "bleu1": bleu1,
    "rouge1": lambda c, r: rouge_n(c, r, 1),
    "rouge2": lambda c, r: rouge_n(c, r, 2),
    "rougeL": rouge_l,
    "meteor": meteor,
    "word_f1": word_f1,
}


def score_pairs(pairs: Sequence[tuple]) -> list[dict[str, float]]:
    """Per-pair metric dicts (CIDEr included, computed against the whole corpus)."""
    toks = [(_as_tokens(c), _as_tokens(r)) for c, r in pairs]
    cider_scores, _ = cider([c for c, _ in toks], [r for _, r in toks])
    rows = []
    for (c, r), cid in zip(toks, cider_scores):
        row = {name: fn(c, r) for name, fn in PAIR_METRICS.items()}
        row["cider"] = cid
        rows.append(row)
    return rows


def score_corpus(pairs: Sequence[tuple]) -> MetricBundle:
    """Macro-average every metric over (candidate, reference) pairs."""
    if not pairs:
        raise ValueError("score_corpus needs at least one pair")
    rows = score_pairs(pairs)
    means = {k: sum(row[k] for row in rows) / len(rows) for k in rows[0]}
    return MetricBundle(**means)
