#!/usr/bin/env python3
"""Freeze corpus-BLEU fixtures for the evaluation tests.

Reference scorer: 13a tokenization, corpus-level clipped n-gram counts for
n=1..4, exponential smoothing of zero numerators, effective order disabled,
BP = exp(1 - ref/hyp) for short hypotheses. Implemented with Python regexes,
independent of the C++ scanner under test.
"""
import json
import math
import random
import re
from collections import Counter
from pathlib import Path

_RULES = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
]


def tokenize_13a(line: str) -> list[str]:
    line = line.replace("<skipped>", "")
    line = line.replace("-\n", "")
    line = line.replace("\n", " ")
    if "&" in line:
        line = line.replace("&quot;", '"')
        line = line.replace("&amp;", "&")
        line = line.replace("&lt;", "<")
        line = line.replace("&gt;", ">")
    line = f" {line} "
    for pattern, repl in _RULES:
        line = pattern.sub(repl, line)
    return line.split()


def ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hyps: list[str], refs: list[str]) -> float:
    assert len(hyps) == len(refs) and hyps
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hyps, refs):
        h, r = tokenize_13a(hyp), tokenize_13a(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, 5):
            hc, rc = ngrams(h, n), ngrams(r, n)
            totals[n - 1] += sum(hc.values())
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
    if hyp_len == 0:
        return 0.0
    smooth = 1.0
    log_sum = 0.0
    for n in range(4):
        if totals[n] == 0:
            return 0.0
        if matches[n] == 0:
            smooth *= 2.0
            p = 1.0 / (smooth * totals[n])
        else:
            p = matches[n] / totals[n]
        log_sum += math.log(p)
    bp = math.exp(1.0 - ref_len / hyp_len) if hyp_len < ref_len else 1.0
    return 100.0 * bp * math.exp(log_sum / 4.0)


WORDS = [
    "the", "a", "cat", "dog", "house", "river", "walked", "jumped", "slowly",
    "quickly", "it's", "don't", "Hello,", "world!", "good", "morning", "1,000",
    "3.14", "42", "end.", "(maybe)", "yes;", "no:", "naïve", "café", "über",
    "quote\"quote", "semi;colon", "slash/slash", "5-year", "re-run", "...", "?!",
]


def random_sentence(rng: random.Random, lo: int = 1, hi: int = 15) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


def perturb(rng: random.Random, sent: str) -> str:
    toks = sent.split()
    mode = rng.random()
    if mode < 0.15:
        return sent  # identical pair
    if mode < 0.30:
        return random_sentence(rng)  # unrelated
    out = []
    for t in toks:
        roll = rng.random()
        if roll < 0.15:
            continue  # deletion
        if roll < 0.30:
            out.append(rng.choice(WORDS))  # substitution
        else:
            out.append(t)
        if rng.random() < 0.10:
            out.append(rng.choice(WORDS))  # insertion
    if not out:
        out = [rng.choice(WORDS)]
    return " ".join(out)


def main() -> None:
    rng = random.Random(20260814)
    cases = []
    # hand-checkable anchors first
    cases.append({"hyps": ["a b c e"], "refs": ["a b c d"]})
    cases.append({"hyps": ["a b c d"], "refs": ["a b c d"]})
    cases.append({"hyps": ["a b c d"], "refs": ["a b c d e f g h"]})
    cases.append({"hyps": ["Hello, world!"], "refs": ["Hello, world!"]})
    while len(cases) < 100:
        n_sent = rng.randint(1, 30)
        refs = [random_sentence(rng) for _ in range(n_sent)]
        hyps = [perturb(rng, r) for r in refs]
        cases.append({"hyps": hyps, "refs": refs})
    for case in cases:
        case["bleu"] = corpus_bleu(case["hyps"], case["refs"])

    anchor = cases[0]["bleu"]
    assert abs(anchor - 59.46) < 0.02, anchor
    assert cases[1]["bleu"] == 100.0
    assert abs(cases[2]["bleu"] - 100.0 * math.exp(-1.0)) < 1e-9

    out = Path(__file__).resolve().parent.parent / "tests" / "data" / "bleu_cases.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"cases": cases}, ensure_ascii=False, indent=1))
    print(f"wrote {len(cases)} cases to {out}")


if __name__ == "__main__":
    main()
