"""Slow, independent reference implementations used by the tests.

Nothing here imports the metric or model code under test except the tokenizer
and the stemmer, which define the inputs rather than the arithmetic.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter

import numpy as np

# --- text metrics -------------------------------------------------------------


def grams(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def clipped_matches(cand_grams, ref_grams):
    # count each candidate gram up to the number of times it appears in the reference
    used = Counter()
    ref = Counter(ref_grams)
    hits = 0
    for g in cand_grams:
        if used[g] < ref[g]:
            used[g] += 1
            hits += 1
    return hits


def f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def bleu1(cand, ref):
    if not cand:
        return 0.0
    p = clipped_matches(cand, ref) / len(cand)
    bp = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return bp * p


def rouge_n(cand, ref, n):
    c, r = grams(cand, n), grams(ref, n)
    if not c or not r:
        return 0.0
    hits = clipped_matches(c, r)
    return f1(hits / len(c), hits / len(r))


def lcs_brute(a, b):
    """Longest common subsequence by trying subsequences of the shorter list."""
    if len(a) > len(b):
        a, b = b, a
    for size in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), size):
            sub = [a[i] for i in idx]
            it = iter(b)
            if all(any(x == y for y in it) for x in sub):
                return size
    return 0


def rouge_l(cand, ref):
    lcs = lcs_brute(cand, ref)
    if lcs == 0:
        return 0.0
    return f1(lcs / len(cand), lcs / len(ref))


def word_f1(cand, ref):
    if not cand and not ref:
        return 1.0
    if not cand or not ref:
        return 0.0
    hits = clipped_matches(cand, ref)
    return f1(hits / len(cand), hits / len(ref))


def chunks(pairs):
    pairs = sorted(pairs)
    n = 0
    for k, (i, j) in enumerate(pairs):
        if k == 0 or not (i == pairs[k - 1][0] + 1 and j == pairs[k - 1][1] + 1):
            n += 1
    return n


def meteor_enumerate(cand, ref, stem):
    """METEOR over every possible one-to-one alignment.

    Among alignments, prefer the most exact matches, then the most matches,
    then the fewest chunks. Only practical for short sentences.
    """
    best = None

    def rec(i, used, pairs, exact):
        nonlocal best
        if i == len(cand):
            key = (exact, len(pairs), -chunks(pairs))
            if best is None or key > best[0]:
                best = (key, list(pairs))
            return
        rec(i + 1, used, pairs, exact)
        for j, w in enumerate(ref):
            if j in used:
                continue
            if cand[i] == w:
                kind = 1
            elif stem(cand[i]) == stem(w):
                kind = 0
            else:
                continue
            pairs.append((i, j))
            rec(i + 1, used | {j}, pairs, exact + kind)
            pairs.pop()

    rec(0, frozenset(), [], 0)
    pairs = best[1]
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(cand), m / len(ref)
    fmean = 10 * p * r / (r + 9 * p)
    return fmean * (1 - 0.5 * (chunks(pairs) / m) ** 3)


def cider_direct(cands, refs, sigma=6.0, max_n=4):
    """CIDEr-D with dense TF-IDF vectors over the full n-gram vocabulary."""
    N = len(refs)
    out = []
    for n in range(1, max_n + 1):
        vocab = sorted({g for doc in cands + refs for g in grams(doc, n)})
        index = {g: i for i, g in enumerate(vocab)}
        df = np.zeros(len(vocab))
        for doc in refs:
            for g in set(grams(doc, n)):
                df[index[g]] += 1
        idf = np.log(N) - np.log(np.maximum(df, 1.0))

        def vec(doc):
            v = np.zeros(len(vocab))
            for g in grams(doc, n):
                v[index[g]] += 1
            return v * idf

        sims = []
        for c, r in zip(cands, refs):
            vc, vr = vec(c), vec(r)
            nc, nr = np.linalg.norm(vc), np.linalg.norm(vr)
            sims.append(0.0 if nc == 0 or nr == 0 else float(np.minimum(vc, vr) @ vr / (nc * nr)))
        out.append(sims)
    scores = []
    for k, (c, r) in enumerate(zip(cands, refs)):
        pen = math.exp(-((len(c) - len(r)) ** 2) / (2 * sigma ** 2))
        scores.append(10 * pen * sum(out[n][k] for n in range(max_n)) / max_n)
    return scores


# --- images -------------------------------------------------------------------


def otsu_exhaustive(img):
    """Threshold maximizing between-class variance, {v <= t} vs {v > t}, float math."""
    v = np.asarray(img, dtype=np.float64).ravel()
    best_t, best_var = None, -1.0
    for t in range(int(v.min()), int(v.max())):
        lo, hi = v[v <= t], v[v > t]
        if len(lo) == 0 or len(hi) == 0:
            continue
        w0, w1 = len(lo) / len(v), len(hi) / len(v)
        var = w0 * w1 * (lo.mean() - hi.mean()) ** 2
        if var > best_var + 1e-12:
            best_t, best_var = t, var
    return int(v[0]) if best_t is None else best_t


def bimodal_image(seed, shape=(64, 64)):
    rng = np.random.default_rng(seed)
    mu0, mu1 = rng.integers(20, 80), rng.integers(150, 220)
    img = np.where(rng.random(shape) < 0.4,
                   rng.normal(mu1, 12, shape), rng.normal(mu0, 10, shape))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def breast_phantom(h=300, w=240, seed=0):
    """Left-breast phantom: tissue on the left side, a bright blob inside it."""
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 6, size=(h, w)).astype(np.uint8)
    img[30:h - 30, 0:w // 2] = 110 + rng.integers(0, 20, size=(h - 60, w // 2))
    cy, cx = h // 2, w // 8
    yy, xx = np.mgrid[:h, :w]
    img[(yy - cy) ** 2 + (xx - cx) ** 2 < 15 ** 2] = 250
    return img


# --- toy decoder --------------------------------------------------------------


def _lin(layer, x):
    # x is a single vector; straight-line W x + s * A (B x)
    d, k = layer.W.shape
    out = []
    for i in range(d):
        acc = 0.0
        for j in range(k):
            acc += layer.W[i, j] * x[j]
        out.append(acc)
    bx = []
    for a in range(layer.B.shape[0]):
        acc = 0.0
        for j in range(k):
            acc += layer.B[a, j] * x[j]
        bx.append(acc)
    for i in range(d):
        acc = 0.0
        for a in range(len(bx)):
            acc += layer.A[i, a] * bx[a]
        out[i] += layer.scale * acc
    return out


def _attend(q, keys, values):
    dk = len(q)
    scores = [sum(q[i] * key[i] for i in range(dk)) / math.sqrt(dk) for key in keys]
    m = max(scores)
    e = [math.exp(s - m) for s in scores]
    z = sum(e)
    w = [x / z for x in e]
    return [sum(w[s] * values[s][i] for s in range(len(values))) for i in range(len(values[0]))]


def crossattn_loss_loop(state, vis, y, bos_id=1):
    """Teacher-forced mean NLL of ``y`` for the cross-attention decoder, one scalar at a time."""
    L = state.layers
    tokens = [bos_id] + list(y[:-1])
    T = len(tokens)
    d = state.cfg.d_model
    x0 = [[state.embed[tok][i] + state.pos[t][i] for i in range(d)] for t, tok in enumerate(tokens)]
    q = [_lin(L["self_attn.q_proj"], x) for x in x0]
    k = [_lin(L["self_attn.k_proj"], x) for x in x0]
    v = [_lin(L["self_attn.v_proj"], x) for x in x0]
    kc = [_lin(L["cross_attn.k_proj"], row) for row in vis]
    vc = [_lin(L["cross_attn.v_proj"], row) for row in vis]
    total = 0.0
    for t in range(T):
        a = _attend(q[t], k[:t + 1], v[:t + 1])
        o = _lin(L["self_attn.o_proj"], a)
        x1 = [x0[t][i] + o[i] for i in range(d)]
        c = _attend(_lin(L["cross_attn.q_proj"], x1), kc, vc)
        x2 = [x1[i] + c[i] for i in range(d)]
        g = _lin(L["mlp.gate_proj"], x2)
        u = _lin(L["mlp.up_proj"], x2)
        hidden = [max(g[i], 0.0) * u[i] for i in range(len(g))]
        dn = _lin(L["mlp.down_proj"], hidden)
        x3 = [x2[i] + dn[i] for i in range(d)]
        W = state.output_matrix
        logits = [sum(W[w][i] * x3[i] for i in range(d)) + state.head_b[w] for w in range(len(W))]
        m = max(logits)
        lse = m + math.log(sum(math.exp(z - m) for z in logits))
        total += lse - logits[y[t]]
    return total / T
