#!/usr/bin/env python3
"""Second implementation of the bootstrap threshold, written from the definitions.

Re-implements std::seed_seq and std::mt19937_64 so the resample draws match the C++
library exactly. Also writes the synthetic basic-score fixtures.

usage: reference_bootstrap.py [--write-fixtures]
"""
import json
import random
import sys
from pathlib import Path

M32 = 0xFFFFFFFF
M64 = 0xFFFFFFFFFFFFFFFF


def seed_seq_generate(seeds, n):
    out = [0x8B8B8B8B] * n
    s = len(seeds)
    t = 11 if n >= 623 else 7 if n >= 68 else 5 if n >= 39 else 3 if n >= 7 else (n - 1) // 2
    p = (n - t) // 2
    q = p + t
    m = max(s + 1, n)

    def T(x):
        return x ^ (x >> 27)

    for k in range(m):
        r1 = (1664525 * T(out[k % n] ^ out[(k + p) % n] ^ out[(k - 1) % n])) & M32
        if k == 0:
            r2 = r1 + s
        elif k <= s:
            r2 = r1 + k % n + seeds[k - 1]
        else:
            r2 = r1 + k % n
        r2 &= M32
        out[(k + p) % n] = (out[(k + p) % n] + r1) & M32
        out[(k + q) % n] = (out[(k + q) % n] + r2) & M32
        out[k % n] = r2
    for k in range(m, m + n):
        r3 = (1566083941 * T((out[k % n] + out[(k + p) % n] + out[(k - 1) % n]) & M32)) & M32
        r4 = (r3 - k % n) & M32
        out[(k + p) % n] ^= r3
        out[(k + q) % n] ^= r4
        out[k % n] = r4
    return out


class MT19937_64:
    N, MM = 312, 156
    A = 0xB5026F5AA96619E9
    UPPER, LOWER = 0xFFFFFFFF80000000, 0x7FFFFFFF

    def __init__(self, seeds):
        a = seed_seq_generate(seeds, 2 * self.N)
        self.x = [(a[2 * i] | (a[2 * i + 1] << 32)) & M64 for i in range(self.N)]
        self.i = self.N

    def twist(self):
        x = self.x
        for k in range(self.N):
            y = (x[k] & self.UPPER) | (x[(k + 1) % self.N] & self.LOWER)
            x[k] = x[(k + self.MM) % self.N] ^ (y >> 1) ^ (self.A if y & 1 else 0)
        self.i = 0

    def __call__(self):
        if self.i >= self.N:
            self.twist()
        z = self.x[self.i]
        self.i += 1
        z ^= (z >> 29) & 0x5555555555555555
        z ^= (z << 17) & 0x71D67FFFEDA60000
        z ^= (z << 37) & 0xFFF7EEE000000000
        z ^= z >> 43
        return z & M64


def quantile(sorted_xs, q):
    pos = q * (len(sorted_xs) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(sorted_xs) - 1)
    frac = pos - lo
    return sorted_xs[lo] if frac == 0.0 else sorted_xs[lo] + frac * (sorted_xs[hi] - sorted_xs[lo])


def bootstrap_threshold(scores, n_resamples=1000, q=0.05, c=0.95, seed=42):
    n = len(scores)
    stats = []
    for b in range(n_resamples):
        rng = MT19937_64([seed & M32, seed >> 32, b & M32, b >> 32])
        sample = sorted(scores[(rng() * n) >> 64] for _ in range(n))
        stats.append(quantile(sample, q))
    stats.sort()
    tail = (1.0 - c) / 2.0
    lo, hi = quantile(stats, tail), quantile(stats, 1.0 - tail)
    return (lo if lo == hi else (lo + hi) / 2.0), lo, hi


def synthetic_scores(n, seed):
    rng = random.Random(seed)
    return [round(rng.uniform(0.55, 0.97), 4) for _ in range(n)]


def write_jsonl(path, scores, prefix):
    with open(path, "w") as f:
        for i, s in enumerate(scores):
            rec = {"id": f"{prefix}-{i:02d}", "method": "self_familiarity", "mode": "instruction",
                   "kind": "basic", "label": "FAMILIAR", "score": s}
            f.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    here = Path(__file__).parent
    if "--write-fixtures" in sys.argv:
        write_jsonl(here / "basic_scores_20.jsonl", synthetic_scores(20, 20), "basic20")
        write_jsonl(here / "basic_scores_50.jsonl", synthetic_scores(50, 50), "basic50")
    scores = [json.loads(l)["score"] for l in open(here / "basic_scores_50.jsonl")]
    h, lo, hi = bootstrap_threshold(scores)
    print(f"threshold={h!r} low={lo!r} high={hi!r} hex={h.hex()}")
