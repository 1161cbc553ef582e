"""Caption metrics implemented from their definitions.

Corpus BLEU-4 (clipped precision, brevity penalty), sentence BLEU-4 with +1
smoothing for reward use, plain CIDEr over TF-IDF n-gram vectors with
video-level document frequencies, ROUGE-L with the max-precision /
max-recall reference aggregation, and an exact-match METEOR variant
(meteor_lite) without stemming or synonym resources. All functions operate
on pre-tokenized sequences and never look at token content, so English
words and Chinese characters score identically.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass

N_MAX = 4
ROUGE_BETA = 1.2
CIDER_SCALE = 10.0
METEOR_ALPHA_DENOM = 9.0  # F = 10PR / (R + 9P)
METEOR_GAMMA = 0.5
METEOR_CHUNK_POWER = 3.0


def ngram_counts(tokens, n_max: int = N_MAX) -> Counter:
    """Count all contiguous n-grams of order 1..n_max as tuple keys."""
    if n_max < 1:
        raise ValueError(f"n_max must be >= 1, got {n_max}")
    tokens = list(tokens)
    counts: Counter = Counter()
    for n in range(1, n_max + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


def _order_ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_length(hyp_len: int, ref_lens) -> int:
    """Reference length closest to hyp_len; ties resolved to the shorter."""
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def bleu4_corpus(hyps, refs_list) -> float:
    """Corpus BLEU-4: pooled clipped n-gram precisions, geometric mean,
    brevity penalty from closest-reference lengths. Any order with zero
    pooled matches zeroes the score.
    """
    if len(hyps) != len(refs_list):
        raise ValueError("hyps and refs_list must be aligned")
    if not hyps:
        raise ValueError("empty corpus")
    matches = [0] * N_MAX
    totals = [0] * N_MAX
    hyp_len_sum = 0
    ref_len_sum = 0
    for hyp, refs in zip(hyps, refs_list):
        hyp = list(hyp)
        hyp_len_sum += len(hyp)
        ref_len_sum += _closest_ref_length(len(hyp), [len(r) for r in refs])
        for n in range(1, N_MAX + 1):
            hyp_counts = _order_ngrams(hyp, n)
            if not hyp_counts:
                continue
            max_ref: Counter = Counter()
            for ref in refs:
                for gram, c in _order_ngrams(list(ref), n).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in hyp_counts.items())
            totals[n - 1] += sum(hyp_counts.values())
    if any(m == 0 or t == 0 for m, t in zip(matches, totals)):
        return 0.0
    log_prec = sum(math.log(m / t) for m, t in zip(matches, totals)) / N_MAX
    bp = 1.0 if hyp_len_sum > ref_len_sum else math.exp(1.0 - ref_len_sum / hyp_len_sum)
    return bp * math.exp(log_prec)


def bleu4_sentence(hyp, refs) -> float:
    """Sentence BLEU-4 with +1 smoothing on zero numerator or denominator
    for orders 2..4 (never order 1), for use as a per-sentence reward.
    """
    if not refs:
        raise ValueError("refs must be nonempty")
    hyp = list(hyp)
    if not hyp:
        return 0.0
    log_prec = 0.0
    for n in range(1, N_MAX + 1):
        hyp_counts = _order_ngrams(hyp, n)
        total = sum(hyp_counts.values())
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, c in _order_ngrams(list(ref), n).items():
                if c > max_ref[gram]:
                    max_ref[gram] = c
        matched = sum(min(c, max_ref[g]) for g, c in hyp_counts.items())
        if n >= 2 and (matched == 0 or total == 0):
            matched, total = matched + 1, total + 1
        if matched == 0:
            return 0.0
        log_prec += math.log(matched / total)
    ref_len = _closest_ref_length(len(hyp), [len(r) for r in refs])
    bp = 1.0 if len(hyp) > ref_len else math.exp(1.0 - ref_len / len(hyp))
    return bp * math.exp(log_prec / N_MAX)


@dataclass
class DocFreq:
    df: dict
    n_videos: int

    def idf(self, gram) -> float:
        return math.log(self.n_videos / max(1, self.df.get(gram, 0)))


def compute_df(corpus) -> DocFreq:
    """Video-level document frequencies: df(g) counts videos whose
    reference set contains g at least once.
    """
    if not corpus:
        raise ValueError("corpus must be nonempty")
    df: Counter = Counter()
    for refs in corpus:
        seen = set()
        for ref in refs:
            seen.update(ngram_counts(list(ref)))
        df.update(seen)
    return DocFreq(dict(df), len(corpus))


def _tfidf_by_order(tokens, df: DocFreq) -> list[dict]:
    vecs = [dict() for _ in range(N_MAX)]
    for gram, c in ngram_counts(list(tokens)).items():
        vecs[len(gram) - 1][gram] = c * df.idf(gram)
    return vecs


def _cosine(u: dict, v: dict) -> float:
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = sum(x * v[g] for g, x in u.items() if g in v)
    return dot / (nu * nv)


def cider(hyp, refs, df: DocFreq) -> float:
    """Plain CIDEr: mean over n=1..4 of the mean cosine similarity between
    the hypothesis and each reference in TF-IDF n-gram space, times 10.
    """
    if not refs:
        raise ValueError("refs must be nonempty")
    hyp_vecs = _tfidf_by_order(hyp, df)
    ref_vecs = [_tfidf_by_order(r, df) for r in refs]
    total = 0.0
    for n in range(N_MAX):
        total += sum(_cosine(hyp_vecs[n], rv[n]) for rv in ref_vecs) / len(refs)
    return CIDER_SCALE * total / N_MAX


def _lcs_length(a, b) -> int:
    """Longest common subsequence length by dynamic programming."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(hyp, refs) -> float:
    """ROUGE-L F-measure with beta=1.2; precision and recall are each taken
    as the maximum over references before combining.
    """
    if not refs:
        raise ValueError("refs must be nonempty")
    hyp = list(hyp)
    if not hyp:
        return 0.0
    prec_max = 0.0
    rec_max = 0.0
    for ref in refs:
        ref = list(ref)
        if not ref:
            continue
        lcs = _lcs_length(hyp, ref)
        prec_max = max(prec_max, lcs / len(hyp))
        rec_max = max(rec_max, lcs / len(ref))
    if prec_max == 0.0 or rec_max == 0.0:
        return 0.0
    beta_sq = ROUGE_BETA * ROUGE_BETA
    return (1 + beta_sq) * prec_max * rec_max / (rec_max + beta_sq * prec_max)


def _min_chunks(hyp, ref) -> tuple[int, int]:
    """Exact-match alignment: (max matches, min chunks at that match count).

    Match count is forced per token type (min of the two occurrence counts);
    a depth-first search over reference positions, with pruning on the
    incumbent chunk count, finds the chunk-minimal assignment. A chunk is a
    run of matches contiguous in both sentences.
    """
    hyp_counts = Counter(hyp)
    ref_counts = Counter(ref)
    need = {t: min(c, ref_counts[t]) for t, c in hyp_counts.items() if t in ref_counts}
    matches = sum(need.values())
    if matches == 0:
        return 0, 0
    positions = {}
    for j, tok in enumerate(ref):
        positions.setdefault(tok, []).append(j)

    best = matches  # chunks never exceed matches
    used = [False] * len(ref)

    def dfs(i: int, remaining: dict, chunks: int, last_j: int) -> None:
        nonlocal best
        if chunks >= best:
            return
        if i == len(hyp):
            best = min(best, chunks)
            return
        tok = hyp[i]
        todo = remaining.get(tok, 0)
        if todo:
            for j in positions[tok]:
                if used[j]:
                    continue
                used[j] = True
                remaining[tok] = todo - 1
                extend = 1 if j != last_j + 1 else 0
                dfs(i + 1, remaining, chunks + extend, j)
                remaining[tok] = todo
                used[j] = False
        # Skip this occurrence only if enough later occurrences remain.
        later = sum(1 for k in range(i + 1, len(hyp)) if hyp[k] == tok)
        if later >= todo:
            dfs(i + 1, remaining, chunks, -2)

    dfs(0, dict(need), 0, -2)
    return matches, best


def meteor_lite(hyp, refs) -> float:
    """Exact-match METEOR: unigram alignment maximizing matches then
    minimizing chunks, F = 10PR/(R+9P), fragmentation penalty
    0.5*(chunks/matches)^3, best score over references.
    """
    if not refs:
        raise ValueError("refs must be nonempty")
    hyp = list(hyp)
    best = 0.0
    for ref in refs:
        ref = list(ref)
        if not hyp or not ref:
            continue
        matches, chunks = _min_chunks(hyp, ref)
        if matches == 0:
            continue
        p = matches / len(hyp)
        r = matches / len(ref)
        f_mean = 10.0 * p * r / (r + METEOR_ALPHA_DENOM * p)
        penalty = METEOR_GAMMA * (chunks / matches) ** METEOR_CHUNK_POWER
        best = max(best, f_mean * (1.0 - penalty))
    return best


@dataclass
class MetricReport:
    bleu4: float
    cider: float
    rouge_l: float
    meteor_lite: float

    def to_json(self) -> str:
        return (
            "{"
            + ", ".join(
                f'"{k}": {getattr(self, k):.4f}'
                for k in ("bleu4", "cider", "rouge_l", "meteor_lite")
            )
            + "}"
        )

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        obj = json.loads(text)
        return cls(**{k: float(obj[k]) for k in ("bleu4", "cider", "rouge_l", "meteor_lite")})


def evaluate_corpus(hyps, refs_list) -> MetricReport:
    """Score a corpus: corpus-level BLEU-4, and per-video CIDEr / ROUGE-L /
    meteor_lite averaged over videos. Document frequencies come from the
    evaluation corpus itself.
    """
    if len(hyps) != len(refs_list):
        raise ValueError("hyps and refs_list must be aligned")
    if not hyps:
        raise ValueError("empty corpus")
    df = compute_df(refs_list)
    n = len(hyps)
    return MetricReport(
        bleu4=bleu4_corpus(hyps, refs_list),
        cider=sum(cider(h, r, df) for h, r in zip(hyps, refs_list)) / n,
        rouge_l=sum(rouge_l(h, r) for h, r in zip(hyps, refs_list)) / n,
        meteor_lite=sum(meteor_lite(h, r) for h, r in zip(hyps, refs_list)) / n,
    )
