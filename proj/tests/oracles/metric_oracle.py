"""Independent reference values for the caption metrics.

LCS is found by enumerating candidate subsequences, TF-IDF vectors are plain
dicts, stems come from NLTK's Porter stemmer (MARTIN_EXTENSIONS mode).
Writes tests/data/metric_oracle.json.

Requires: pip install nltk
"""

import itertools
import json
import math
import string
from collections import Counter
from pathlib import Path

from nltk.stem.porter import PorterStemmer

STEM = PorterStemmer(mode=PorterStemmer.MARTIN_EXTENSIONS).stem
SEPARATORS = set(string.whitespace) | set(string.punctuation) | {chr(c) for c in range(32)} | {chr(127)}


def tokens(text):
    out, cur = [], ""
    for ch in text:
        if ord(ch) < 128 and ch in SEPARATORS:
            if cur:
                out.append(cur)
            cur = ""
        else:
            cur += ch.lower() if ord(ch) < 128 else ch
    if cur:
        out.append(cur)
    return out


def ngrams(t, n):
    return Counter(tuple(t[i:i + n]) for i in range(len(t) - n + 1))


# --- BLEU -----------------------------------------------------------------

def bleu_stats(cand, refs):
    m, tot = [0] * 4, [0] * 4
    for n in range(1, 5):
        c = ngrams(cand, n)
        best = Counter()
        for r in refs:
            for g, k in ngrams(r, n).items():
                best[g] = max(best[g], k)
        m[n - 1] = sum(min(k, best[g]) for g, k in c.items())
        tot[n - 1] = sum(c.values())
    rl = min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    return m, tot, len(cand), rl


def bleu_from(m, tot, c, r):
    if c == 0 or any(x == 0 for x in m):
        return 0.0
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(sum(math.log(a / b) for a, b in zip(m, tot)) / 4)


def bleu_corpus(pairs):
    M, T, C, R = [0] * 4, [0] * 4, 0, 0
    for cand, refs in pairs:
        m, t, c, r = bleu_stats(cand, refs)
        M = [a + b for a, b in zip(M, m)]
        T = [a + b for a, b in zip(T, t)]
        C += c
        R += r
    return 100 * bleu_from(M, T, C, R)


def bleu_smoothed(pairs):
    total = 0.0
    for cand, refs in pairs:
        m, t, c, r = bleu_stats(cand, refs)
        if c == 0 or m[0] == 0:
            continue
        bp = 1.0 if c > r else math.exp(1 - r / c)
        logs = [math.log(m[0] / t[0])] + [math.log((m[i] + 1) / (t[i] + 1)) for i in range(1, 4)]
        total += bp * math.exp(sum(logs) / 4)
    return 100 * total / len(pairs)


# --- ROUGE-L --------------------------------------------------------------

def lcs_brute(a, b):
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for size in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), size):
            sub = [short[i] for i in idx]
            it = iter(long_)
            if all(any(x == y for y in it) for x in sub):
                return size
    return 0


def rouge_pair(cand, refs, beta=1.2):
    best = 0.0
    for r in refs:
        l = lcs_brute(cand, r)
        if l == 0:
            continue
        p, rec = l / len(cand), l / len(r)
        best = max(best, (1 + beta**2) * p * rec / (rec + beta**2 * p))
    return best


# --- METEOR-lite ----------------------------------------------------------

def meteor_align(cand, ref, alpha=0.9, beta=3.0, gamma=0.5):
    link = [None] * len(cand)
    taken = [False] * len(ref)
    for c, r in ((cand, ref), ([STEM(w) for w in cand], [STEM(w) for w in ref])):
        for i in range(len(cand)):
            if link[i] is not None:
                continue
            pick = None
            if i > 0 and link[i - 1] is not None:
                nxt = link[i - 1] + 1
                if nxt < len(ref) and not taken[nxt] and c[i] == r[nxt]:
                    pick = nxt
            if pick is None:
                pick = next((j for j in range(len(ref)) if not taken[j] and c[i] == r[j]), None)
            if pick is not None:
                link[i] = pick
                taken[pick] = True
    matched = [i for i in range(len(cand)) if link[i] is not None]
    if not matched:
        return 0.0
    chunks = sum(1 for i in matched if not (i > 0 and link[i - 1] is not None and link[i - 1] + 1 == link[i]))
    m = len(matched)
    p, r = m / len(cand), m / len(ref)
    f = p * r / (alpha * p + (1 - alpha) * r)
    return f * (1 - gamma * (chunks / m) ** beta)


def meteor_pair(cand, refs):
    return max(meteor_align(cand, r) for r in refs)


# --- CIDEr-D --------------------------------------------------------------

def cider_setup(docs):
    df = Counter()
    for doc in docs:
        seen = set()
        for r in doc:
            for n in range(1, 5):
                seen |= set(ngrams(r, n))
        df.update(seen)
    return df, math.log(len(docs))


def cider_vec(t, df, logn):
    vecs = []
    for n in range(1, 5):
        vecs.append({g: k * (logn - math.log(max(1.0, df.get(g, 0)))) for g, k in ngrams(t, n).items()})
    return vecs


def cider_per_n(cand, ref, df, logn, sigma=6.0):
    vc, vr = cider_vec(cand, df, logn), cider_vec(ref, df, logn)
    pen = math.exp(-((len(cand) - len(ref)) ** 2) / (2 * sigma**2))
    out = []
    for a, b in zip(vc, vr):
        val = sum(min(w, b[g]) * b[g] for g, w in a.items() if g in b)
        na = math.sqrt(sum(w * w for w in a.values()))
        nb = math.sqrt(sum(w * w for w in b.values()))
        if na and nb:
            val /= na * nb
        out.append((val, val * pen))
    return out


def cider_raw(cand, refs, df, logn):
    return 10 * sum(sum(p for _, p in cider_per_n(cand, r, df, logn)) / 4 for r in refs) / len(refs)


def cider_corpus(pairs):
    df, logn = cider_setup([refs for _, refs in pairs])
    return 10 * sum(cider_raw(c, refs, df, logn) for c, refs in pairs) / len(pairs)


# --- cases ----------------------------------------------------------------

def tok_pairs(raw):
    return [(tokens(c), [tokens(r) for r in refs]) for c, refs in raw]


out = {}

m, t, c, r = bleu_stats(tokens("the the the the"), [tokens("the cat")])
out["bleu_clip"] = {"candidate": "the the the the", "reference": "the cat", "matches": m, "totals": t,
                    "candidate_length": c, "reference_length": r, "p1": m[0] / t[0]}

out["rouge_swap"] = {"candidate": "a b c d", "reference": "a c b d",
                     "lcs": lcs_brute(tokens("a b c d"), tokens("a c b d")),
                     "score": 100 * rouge_pair(tokens("a b c d"), [tokens("a c b d")])}

out["meteor_identical"] = {"text": "the cat sat", "score": 100 * meteor_pair(tokens("the cat sat"), [tokens("the cat sat")])}
out["meteor_stem"] = {"candidate": "cats running", "reference": "cat runs",
                      "score": 100 * meteor_pair(tokens("cats running"), [tokens("cat runs")])}

two = [("a man rides a red bike down the hill", ["a man rides a red bike down the hill"]),
       ("two dogs play in the fresh snow", ["two dogs play in the fresh snow"])]
tp = tok_pairs(two)
df, logn = cider_setup([refs for _, refs in tp])
out["cider_identical"] = {"pairs": [{"candidate": c, "references": refs} for c, refs in two],
                          "raw_first": cider_raw(tp[0][0], tp[0][1], df, logn),
                          "reported": cider_corpus(tp)}

long_cand = "a man rides a red bike down the hill one two three four five six"
pn = cider_per_n(tokens(long_cand), tokens(two[0][1][0]), df, logn)
out["cider_length"] = {"candidate": long_cand, "reference": two[0][1][0],
                       "unpenalized": [a for a, _ in pn], "per_n": [b for _, b in pn]}

corpus = [
    ("The red square turned blue.", ["The red square became blue.", "A red square is now blue!"]),
    ("A cat sat on the mat today", ["The cat is sitting on a mat.", "a cat sat on the mat"]),
    ("The sky is dark, stars appear.", ["The daytime sky turned into night with stars."]),
    ("nothing changed", ["There is no difference between the images."]),
    ("The spaghetti was replaced by soup.", ["The spaghetti has been replaced by soup.", "Soup replaced the spaghetti."]),
    ("dogs running in the park", ["A dog runs in the park", "two dogs ran through a park"]),
]
cp = tok_pairs(corpus)
out["corpus"] = {
    "pairs": [{"candidate": c, "references": refs} for c, refs in corpus],
    "tokens_first": tokens(corpus[0][0]),
    "bleu4": bleu_corpus(cp),
    "bleu4_smoothed": bleu_smoothed(cp),
    "rouge_l": 100 * sum(rouge_pair(c, refs) for c, refs in cp) / len(cp),
    "meteor": 100 * sum(meteor_pair(c, refs) for c, refs in cp) / len(cp),
    "cider_d": cider_corpus(cp),
    "rouge_pairs": [rouge_pair(c, refs) for c, refs in cp],
    "meteor_pairs": [meteor_pair(c, refs) for c, refs in cp],
}

path = Path(__file__).resolve().parent.parent / "data" / "metric_oracle.json"
path.write_text(json.dumps(out, indent=2) + "\n")
