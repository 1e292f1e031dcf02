"""Independent reference implementations used to freeze expected test values.

Everything here is written from the metric definitions directly, using exact
rational arithmetic where possible, and never imports the library code it is
used to check (tokenization excepted, where fixtures are chosen so that
whitespace splitting and the library tokenizer agree).
"""

from __future__ import annotations

import math
from collections import Counter
from fractions import Fraction


def reference_corpus_bleu(hyp_token_lists, ref_token_lists, max_order=4):
    """Corpus BLEU from first principles with exact clipped-count fractions.

    Orders with an empty hypothesis denominator are excluded from the
    geometric mean (effective-order convention); any populated order with
    zero matches makes the whole score zero.
    """
    assert len(hyp_token_lists) == len(ref_token_lists)
    precisions = []
    for n in range(1, max_order + 1):
        matched = 0
        total = 0
        for hyp, ref in zip(hyp_token_lists, ref_token_lists):
            hyp_ngrams = Counter(tuple(hyp[i : i + n]) for i in range(len(hyp) - n + 1))
            ref_ngrams = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
            total += sum(hyp_ngrams.values())
            for gram, count in hyp_ngrams.items():
                matched += min(count, ref_ngrams.get(gram, 0))
        if total == 0:
            continue
        if matched == 0:
            return 0.0
        precisions.append(Fraction(matched, total))
    if not precisions:
        return 0.0
    hyp_len = sum(len(h) for h in hyp_token_lists)
    ref_len = sum(len(r) for r in ref_token_lists)
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    geo_mean = math.exp(sum(math.log(float(p)) for p in precisions) / len(precisions))
    return 100.0 * bp * geo_mean


def brute_force_knn(ids, vectors, query, k, exclude_id=None):
    """Rank every entry by cosine (dot of unit vectors), ties by ascending id."""
    import numpy as np

    scored = []
    for pid, vec in zip(ids, vectors):
        if pid == exclude_id:
            continue
        scored.append((pid, float(np.dot(np.asarray(vec, dtype=np.float64), np.asarray(query, dtype=np.float64)))))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]
