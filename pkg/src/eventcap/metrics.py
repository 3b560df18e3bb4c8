"""Caption quality metrics and the dense-captioning score.

BLEU and CIDEr work over n-gram count profiles up to order 4.  METEOR is a
dependency-free variant: unigram alignment by exact match and then by shared
4-character prefix stems, with the classic 0.9 recall weighting and the cubed
fragmentation penalty.  The dense score ties localization to captioning by
matching ground-truth events against scored captioned intervals at several
tIoU thresholds.
"""

import math
from collections import Counter
from dataclasses import dataclass

from .errors import ConfigError, ValidationError
from .proposals import rank_proposals, tiou

MAX_ORDER = 4
STEM_LEN = 4


def ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def ngram_profile(tokens):
    """Counts for every order 1..4 of one token list."""
    return {n: ngram_counts(tokens, n) for n in range(1, MAX_ORDER + 1)}


# ---------------------------------------------------------------------------
# BLEU


def _closest_ref_length(cand_len, references):
    # ties between reference lengths break toward the shorter one
    best = None
    for ref in references:
        key = (abs(len(ref) - cand_len), len(ref))
        if best is None or key < best:
            best = key
    return best[1]


def _clipped_matches(candidate, references, n):
    cand = ngram_counts(candidate, n)
    limit = Counter()
    for ref in references:
        for g, c in ngram_counts(ref, n).items():
            if c > limit[g]:
                limit[g] = c
    matched = sum(min(c, limit[g]) for g, c in cand.items())
    return matched, max(len(candidate) - n + 1, 0)


def corpus_bleu(candidates, references_per_item, n):
    """BLEU-n with match counts pooled over all items before the geometric mean.

    Missing n-grams at any order (including candidates shorter than the
    order) zero the whole score; there is no smoothing.
    """
    if not 1 <= n <= MAX_ORDER:
        raise ValidationError("BLEU order must lie in 1..4")
    if len(candidates) != len(references_per_item) or not candidates:
        raise ValidationError("need one reference list per candidate")
    for refs in references_per_item:
        if not refs:
            raise ValidationError("every item needs at least one reference")
    matched = [0] * n
    total = [0] * n
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references_per_item):
        cand_len += len(cand)
        ref_len += _closest_ref_length(len(cand), refs)
        for k in range(1, n + 1):
            m, t = _clipped_matches(cand, refs, k)
            matched[k - 1] += m
            total[k - 1] += t
    if cand_len == 0:
        return 0.0
    log_prec = 0.0
    for m, t in zip(matched, total):
        if m == 0 or t == 0:
            return 0.0
        log_prec += math.log(m / t) / n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_prec)


def bleu_n(candidate, references, n):
    return corpus_bleu([candidate], [references], n)


# ---------------------------------------------------------------------------
# METEOR (prefix-stem variant)


def _align(candidate, reference):
    """Leftmost-first greedy unigram alignment, exact pass then stem pass.

    Returns (cand_idx, ref_idx) pairs; each side used at most once.
    """
    used = [False] * len(reference)
    pairs = []
    taken = [False] * len(candidate)
    for i, tok in enumerate(candidate):
        for j, ref_tok in enumerate(reference):
            if not used[j] and ref_tok == tok:
                used[j] = True
                taken[i] = True
                pairs.append((i, j))
                break
    for i, tok in enumerate(candidate):
        if taken[i] or len(tok) < STEM_LEN:
            continue
        stem = tok[:STEM_LEN]
        for j, ref_tok in enumerate(reference):
            if not used[j] and len(ref_tok) >= STEM_LEN and ref_tok[:STEM_LEN] == stem:
                used[j] = True
                pairs.append((i, j))
                break
    return sorted(pairs)


def _chunks(pairs):
    runs = 0
    prev = None
    for i, j in pairs:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            runs += 1
        prev = (i, j)
    return runs


def meteor_lite(candidate, references):
    """Alignment F-score with fragmentation penalty, max over references."""
    if not references or any(len(r) == 0 for r in references):
        raise ValidationError("references must be non-empty token lists")
    best = 0.0
    for reference in references:
        pairs = _align(candidate, reference)
        m = len(pairs)
        if m == 0:
            continue
        p = m / len(candidate)
        r = m / len(reference)
        f = p * r / (0.9 * p + 0.1 * r)
        penalty = 0.5 * (_chunks(pairs) / m) ** 3
        best = max(best, f * (1.0 - penalty))
    return best


# ---------------------------------------------------------------------------
# CIDEr


def cider_idf(reference_lists):
    """Document frequencies per order over reference items.

    An n-gram counts once per item if any of the item's references holds it.
    Returns ({order: Counter}, item count).
    """
    if not reference_lists:
        raise ValidationError("idf needs at least one reference item")
    df = {n: Counter() for n in range(1, MAX_ORDER + 1)}
    for refs in reference_lists:
        seen = {n: set() for n in range(1, MAX_ORDER + 1)}
        for ref in refs:
            for n in range(1, MAX_ORDER + 1):
                seen[n].update(ngram_counts(ref, n))
        for n in range(1, MAX_ORDER + 1):
            for g in seen[n]:
                df[n][g] += 1
    return df, len(reference_lists)


def _cosine(a, b):
    # tf-idf cosine over sparse count dicts; zero vector on either side -> 0
    dot = 0.0
    for g, w in a.items():
        if g in b:
            dot += w * b[g]
    na = math.sqrt(sum(w * w for w in a.values()))
    nb = math.sqrt(sum(w * w for w in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def _tfidf(tokens, n, df, m_items):
    return {g: c * math.log(m_items / max(1, df[n][g]))
            for g, c in ngram_counts(tokens, n).items()}


def cider_pair(candidate, references, df, m_items):
    """Score one candidate against its references under a fixed idf table."""
    total = 0.0
    for n in range(1, MAX_ORDER + 1):
        cand_vec = _tfidf(candidate, n, df, m_items)
        per_ref = [_cosine(cand_vec, _tfidf(ref, n, df, m_items))
                   for ref in references]
        total += sum(per_ref) / len(per_ref)
    return 10.0 * total / MAX_ORDER


def cider(candidates, references_per_item):
    if len(candidates) != len(references_per_item) or not candidates:
        raise ValidationError("need one reference list per candidate")
    for refs in references_per_item:
        if not refs:
            raise ValidationError("every item needs at least one reference")
    df, m_items = cider_idf(references_per_item)
    scores = [cider_pair(cand, refs, df, m_items)
              for cand, refs in zip(candidates, references_per_item)]
    return sum(scores) / len(scores)


# ---------------------------------------------------------------------------
# dense-captioning score


@dataclass
class CaptionedInterval:
    t_start: float
    t_end: float
    score: float
    tokens: list


@dataclass
class DenseCaptionConfig:
    tiou_thresholds: tuple = (0.3, 0.5, 0.7)
    top_n: int = 1000
    metric: str = "meteor"

    def validate(self):
        if not self.tiou_thresholds:
            raise ConfigError("need at least one tIoU threshold")
        if any(not 0.0 < t <= 1.0 for t in self.tiou_thresholds):
            raise ConfigError("tIoU thresholds must lie in (0, 1]")
        if self.top_n < 1:
            raise ConfigError("top_n must be positive")
        if self.metric not in PAIR_METRICS:
            raise ConfigError(f"unknown caption metric '{self.metric}'")


def _make_pair_metrics():
    metrics = {f"bleu{n}": (lambda n: lambda c, r, ctx: bleu_n(c, [r], n))(n)
               for n in range(1, MAX_ORDER + 1)}
    metrics["meteor"] = lambda c, r, ctx: meteor_lite(c, [r])
    metrics["cider"] = lambda c, r, ctx: cider_pair(c, [r], *ctx)
    return metrics


PAIR_METRICS = _make_pair_metrics()


def _match_one_video(predictions, events, tau):
    """One-to-one GT-driven matching: longest GT first, best tIoU above tau."""
    order = sorted(range(len(events)),
                   key=lambda i: (-(events[i].t_end - events[i].t_start), i))
    free = [True] * len(predictions)
    pairs = []
    for gi in order:
        best = None
        for pi, pred in enumerate(predictions):
            if not free[pi]:
                continue
            overlap = tiou((pred.t_start, pred.t_end),
                           (events[gi].t_start, events[gi].t_end))
            if overlap >= tau and (best is None or overlap > best[0]):
                best = (overlap, pi)
        if best is not None:
            free[best[1]] = False
            pairs.append((best[1], gi))
    return pairs


def dense_caption_breakdown(predictions_by_video, gt_by_video,
                            config=None):
    """Per-threshold corpus scores: mean pair metric with unmatched GT as 0.

    predictions_by_video maps video id to CaptionedInterval lists; gt_by_video
    maps video id to VideoRecord.  Predictions for unknown videos are ignored
    and unmatched predictions carry no penalty.
    """
    config = config or DenseCaptionConfig()
    config.validate()
    total_gt = sum(len(rec.events) for rec in gt_by_video.values())
    if total_gt == 0:
        raise ValidationError("dense scoring needs at least one ground-truth event")
    pair_fn = PAIR_METRICS[config.metric]
    ctx = None
    if config.metric == "cider":
        ctx = cider_idf([[ev.tokens] for rec in gt_by_video.values()
                         for ev in rec.events])
    kept = {}
    for vid in sorted(gt_by_video):
        preds = rank_proposals(predictions_by_video.get(vid, []))
        kept[vid] = preds[:config.top_n]
    out = {}
    for tau in config.tiou_thresholds:
        acc = 0.0
        for vid in sorted(gt_by_video):
            events = gt_by_video[vid].events
            for pi, gi in _match_one_video(kept[vid], events, tau):
                acc += pair_fn(kept[vid][pi].tokens, events[gi].tokens, ctx)
        out[tau] = acc / total_gt
    return out


def dense_caption_score(predictions_by_video, gt_by_video, config=None):
    breakdown = dense_caption_breakdown(predictions_by_video, gt_by_video, config)
    return sum(breakdown.values()) / len(breakdown)
