"""Evaluation arithmetic: edit distance, correlations, topographic similarity,
unigram statistics, ROUGE_L, BLEU-4, and perplexity.

All entropies, NLLs, and perplexities are in nats.  Correlation helpers return
None when the statistic is undefined (zero variance) rather than raising, so
report assembly can record the exclusion instead of crashing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import Prng


# -- sequence distances -------------------------------------------------------


def levenshtein(a, b) -> int:
    """Minimal unit-cost insert/delete/substitute count (two-row DP)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def neg_cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("neg_cosine undefined for zero-norm vectors")
    return -float(u @ v) / (nu * nv)


# -- correlations --------------------------------------------------------------


def _ranks(values: np.ndarray) -> np.ndarray:
    """1-based fractional ranks with average ties."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    sorted_vals = values[order]
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pearson(x, y) -> float | None:
    """Product-moment correlation; None when either variance is zero."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValueError(f"pearson needs two equal-length lists of >= 2 points, "
                         f"got {x.size} and {y.size}")
    xm = x - x.mean()
    ym = y - y.mean()
    dx = math.sqrt(float(xm @ xm))
    dy = math.sqrt(float(ym @ ym))
    if dx == 0.0 or dy == 0.0:
        return None
    return float(xm @ ym) / (dx * dy)


def spearman(x, y) -> float | None:
    """Pearson correlation of fractional (average-tie) ranks; None if degenerate."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValueError(f"spearman needs two equal-length lists of >= 2 points, "
                         f"got {x.size} and {y.size}")
    return pearson(_ranks(x), _ranks(y))


# -- topographic similarity ------------------------------------------------------

FULL_MODE_LIMIT = 2_000  # auto mode switches to sampled pairs above this N
DEFAULT_SAMPLED_PAIRS = 100_000


@dataclass
class TopoSimReport:
    rho: float | None
    pair_count: int
    mode: str
    seed: int | None = None
    reason: str | None = None

    def to_dict(self) -> dict:
        return {"rho": self.rho, "pair_count": self.pair_count, "mode": self.mode,
                "seed": self.seed, "reason": self.reason}


def _sample_pair_indices(n: int, pairs: int, prng: Prng) -> tuple[np.ndarray, np.ndarray]:
    """Uniform pairs (i < j) without replacement via draw-and-dedupe."""
    total = n * (n - 1) // 2
    chosen: list[int] = []
    seen: set[int] = set()
    while len(chosen) < pairs:
        draw = prng.integers(total, size=2 * (pairs - len(chosen)))
        for k in draw.tolist():
            if k not in seen:
                seen.add(k)
                chosen.append(k)
                if len(chosen) == pairs:
                    break
    flat = np.asarray(chosen, dtype=np.int64)
    # decode flat triangular index k -> (i, j), i < j
    k_rev = total - 1 - flat
    p = (np.sqrt(8.0 * k_rev.astype(np.float64) + 1.0).astype(np.int64) - 1) // 2
    # float sqrt can be off by one near boundaries; fix up exactly
    while True:
        too_big = (p + 1) * (p + 2) // 2 <= k_rev
        too_small = p * (p + 1) // 2 > k_rev
        if not (too_big.any() or too_small.any()):
            break
        p = p + too_big.astype(np.int64) - too_small.astype(np.int64)
    i = n - 2 - p
    j = flat - (i * (2 * n - i - 1)) // 2 + i + 1
    return i, j


def topographic_similarity(messages, features, mode: str = "auto",
                           pairs: int = DEFAULT_SAMPLED_PAIRS,
                           seed: int = 0) -> TopoSimReport:
    """Spearman correlation between message edit distances and negative
    cosine similarity of the paired inputs, over pairs i < j."""
    n = len(messages)
    features = np.asarray(features, dtype=np.float64)
    if n < 3:
        raise ValueError(f"topographic similarity needs >= 3 items, got {n}")
    if features.shape[0] != n:
        raise ValueError(f"{n} messages vs {features.shape[0]} feature rows")

    total = n * (n - 1) // 2
    if mode == "auto":
        mode = "full" if n <= FULL_MODE_LIMIT else "sampled"
    if mode == "full" or (mode == "sampled" and pairs >= total):
        ii, jj = np.triu_indices(n, k=1)
        used_mode, used_seed, count = "full", None, total
    elif mode == "sampled":
        ii, jj = _sample_pair_indices(n, pairs, Prng(seed, "toposim"))
        used_mode, used_seed, count = "sampled", seed, pairs
    else:
        raise ValueError(f"unknown toposim mode {mode!r}")

    norms = np.linalg.norm(features, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("topographic similarity undefined for zero-norm feature rows")
    unit = features / norms[:, None]
    cs = -(unit[ii] * unit[jj]).sum(axis=1)
    ed = np.fromiter((levenshtein(messages[i], messages[j])
                      for i, j in zip(ii.tolist(), jj.tolist())),
                     dtype=np.float64, count=count)

    if np.all(ed == ed[0]):
        return TopoSimReport(None, count, used_mode, used_seed,
                             reason="zero edit-distance variance")
    if np.all(cs == cs[0]):
        return TopoSimReport(None, count, used_mode, used_seed,
                             reason="zero input-distance variance")
    return TopoSimReport(spearman(ed, cs), count, used_mode, used_seed)


# -- unigram statistics -----------------------------------------------------------


@dataclass
class UnigramReport:
    vocab_size: int
    total_tokens: int
    used_vocab: int
    entropy: float  # nats
    zipf_exponent: float | None
    counts: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "total_tokens": self.total_tokens,
                "used_vocab": self.used_vocab, "entropy": self.entropy,
                "zipf_exponent": self.zipf_exponent}


def unigram_stats(messages, vocab_size: int) -> UnigramReport:
    counts = np.zeros(vocab_size, dtype=np.int64)
    total = 0
    for msg in messages:
        arr = np.asarray(msg, dtype=np.int64)
        if arr.size:
            counts += np.bincount(arr, minlength=vocab_size)
            total += arr.size
    if total == 0:
        raise ValueError("unigram_stats needs a non-empty corpus")
    p = counts[counts > 0] / total
    entropy = float(-(p * np.log(p)).sum())
    used = int((counts > 0).sum())

    exponent = None
    if used >= 2:
        freqs = np.sort(counts[counts > 0])[::-1].astype(np.float64)
        ranks = np.arange(1, used + 1, dtype=np.float64)
        slope = np.polyfit(np.log(ranks), np.log(freqs), 1)[0]
        exponent = float(-slope)
    return UnigramReport(vocab_size, total, used, entropy, exponent, counts)


def zipf_entropy(vocab_size: int, s: float = 1.0) -> float:
    """Entropy in nats of the ideal Zipf(s) distribution over `vocab_size` ranks."""
    r = np.arange(1, vocab_size + 1, dtype=np.float64)
    w = r ** (-s)
    p = w / w.sum()
    return float(-(p * np.log(p)).sum())


def kl_to_zipf(counts: np.ndarray, s: float = 1.0) -> float:
    """KL(empirical || ideal Zipf(s)) in nats; empirical ranks sorted by count."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        raise ValueError("empty counts")
    r = np.arange(1, counts.size + 1, dtype=np.float64)
    q = r ** (-s)
    q /= q.sum()
    p = np.sort(counts)[::-1] / total
    nz = p > 0
    return float((p[nz] * np.log(p[nz] / q[nz])).sum())


# -- translation / captioning scores -------------------------------------------------


@dataclass
class RougeScore:
    precision: float
    recall: float
    f: float


def _lcs_length(a, b) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if ca == cb else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference, beta: float = 1.2) -> RougeScore:
    """LCS-based F measure; beta weights recall (captioning convention 1.2)."""
    if len(reference) == 0:
        raise ValueError("rouge_l needs a non-empty reference")
    lcs = _lcs_length(candidate, reference) if len(candidate) else 0
    if lcs == 0:
        return RougeScore(0.0, 0.0, 0.0)
    p = lcs / len(candidate)
    r = lcs / len(reference)
    f = (1.0 + beta * beta) * p * r / (r + beta * beta * p)
    return RougeScore(p, r, f)


def _ngram_counts(tokens, n: int) -> dict:
    counts: dict = {}
    for i in range(len(tokens) - n + 1):
        key = tuple(tokens[i : i + n])
        counts[key] = counts.get(key, 0) + 1
    return counts


def bleu4(candidates, references) -> float:
    """Corpus-level unsmoothed BLEU-4 with brevity penalty.

    Orders with zero candidate n-grams are dropped from the geometric mean;
    any remaining zero precision zeroes the score.
    """
    if len(candidates) == 0:
        raise ValueError("bleu4 needs at least one candidate")
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    clipped = [0] * 4
    totals = [0] * 4
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, 5):
            cc = _ngram_counts(cand, n)
            rc = _ngram_counts(ref, n)
            totals[n - 1] += max(len(cand) - n + 1, 0)
            clipped[n - 1] += sum(min(c, rc.get(k, 0)) for k, c in cc.items())
    if cand_len == 0:
        return 0.0
    log_precisions = []
    for n in range(4):
        if totals[n] == 0:
            continue
        if clipped[n] == 0:
            return 0.0
        log_precisions.append(math.log(clipped[n] / totals[n]))
    if not log_precisions:
        return 0.0
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(sum(log_precisions) / len(log_precisions))


def perplexity(nll_total_nats: float, token_count: int) -> float:
    if token_count <= 0:
        raise ValueError(f"perplexity needs token_count > 0, got {token_count}")
    return math.exp(nll_total_nats / token_count)


# -- correlation reports ------------------------------------------------------------


@dataclass
class CorrelationReport:
    metric: str
    target: str
    pearson_rho: float | None
    spearman_rho: float | None
    point_count: int
    excluded: int
    exclusion_reasons: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"metric": self.metric, "target": self.target,
                "pearson": self.pearson_rho, "spearman": self.spearman_rho,
                "points": self.point_count, "excluded": self.excluded,
                "exclusion_reasons": list(self.exclusion_reasons)}
