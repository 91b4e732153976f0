#!/usr/bin/env python3
"""Brute-force reference values for the n-gram and human-likeness metrics.

Writes tests/golden/ngram_metrics.json. Sequences are content tokens only
(no eos). Rerun after changing the metric definitions:

    python3 tests/oracles/ngram_oracle.py
"""
import itertools
import json
import math
import pathlib
import random


def ngrams(seq, n):
    return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]


def clipped_matches(hyp, refs, n):
    grams = ngrams(hyp, n)
    matched = 0
    for g in set(grams):
        in_hyp = grams.count(g)
        best_ref = max(ngrams(r, n).count(g) for r in refs)
        matched += min(in_hyp, best_ref)
    return matched, len(grams)


def closest_ref_length(hyp, refs):
    return min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]


def bleu4(hyp, refs):
    stats = [clipped_matches(hyp, refs, n) for n in range(1, 5)]
    if not hyp or stats[0][0] == 0:
        return 0.0, stats
    precisions = [stats[0][0] / stats[0][1]]
    for m, t in stats[1:]:
        if len(hyp) < 4 or m == 0:
            m, t = m + 1, t + 1
        precisions.append(m / t)
    c, r = len(hyp), closest_ref_length(hyp, refs)
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return bp * math.exp(sum(math.log(p) for p in precisions) / 4.0), stats


def lcs(a, b):
    # exhaustive: longest subsequence of a that is also a subsequence of b
    def is_subseq(s, t):
        it = iter(t)
        return all(x in it for x in s)
    for k in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), k):
            if is_subseq([a[i] for i in idx], b):
                return k
    return 0


def unigram_overlap(hyp, ref):
    remaining = list(ref)
    overlap = 0
    for t in hyp:
        if t in remaining:
            remaining.remove(t)
            overlap += 1
    return overlap


def prf(overlap, h, r):
    p = overlap / h if h else 0.0
    rec = overlap / r if r else 0.0
    f = 2 * p * rec / (p + rec) if p + rec > 0 else 0.0
    return [p, rec, f]


def novelty(seq, cond):
    if not seq:
        return 0.0
    return sum(1 for t in seq if t not in cond) / len(seq)


def repetition3(seq):
    grams = ngrams(seq, 3)
    if not grams:
        return 0.0
    return sum(1 for g in grams if grams.count(g) > 1) / len(grams)


def main():
    rng = random.Random(20260101)
    tokens = list(range(3, 9))
    cases = []
    for case in range(100):
        hyp_len = 0 if case % 25 == 0 else rng.randint(1, 8)
        hyp = [rng.choice(tokens[:rng.randint(2, 6)]) for _ in range(hyp_len)]
        refs = [[rng.choice(tokens) for _ in range(rng.randint(1, 8))]
                for _ in range(rng.randint(1, 3))]
        if case % 10 == 3:
            refs[0] = list(hyp) if hyp else refs[0]
        cond = [rng.choice(tokens) for _ in range(rng.randint(1, 6))]
        b, stats = bleu4(hyp, refs)
        r = refs[0]
        cases.append({
            "hyp": hyp,
            "refs": refs,
            "cond": cond,
            "bleu4": b,
            "bleu_matches": [m for m, _ in stats],
            "bleu_totals": [t for _, t in stats],
            "ref_length": closest_ref_length(hyp, refs),
            "rouge1_overlap": unigram_overlap(hyp, r),
            "rouge1": prf(unigram_overlap(hyp, r), len(hyp), len(r)),
            "lcs": lcs(hyp, r),
            "rougeL": prf(lcs(hyp, r), len(hyp), len(r)),
            "length": len(hyp),
            "novelty": novelty(hyp, cond),
            "repetition3": repetition3(hyp),
        })
    a, b, c, d, e, f = range(3, 9)
    named = {"abcde_vs_abcdf": bleu4([a, b, c, d, e], [[a, b, c, d, f]])[0]}
    out = pathlib.Path(__file__).resolve().parent.parent / "golden" / "ngram_metrics.json"
    lines = ",\n".join("  " + json.dumps(x) for x in cases)
    out.write_text('{"named": ' + json.dumps(named) + ',\n "cases": [\n' + lines + "\n]}\n")
    print(f"wrote {len(cases)} cases to {out}")


if __name__ == "__main__":
    main()
