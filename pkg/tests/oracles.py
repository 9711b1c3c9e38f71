"""Independent reference implementations used as test oracles.

Pure Python with no numpy, written from the textbook definitions rather than
from the package code, so agreement between the two is meaningful.
"""

from __future__ import annotations

import math
import re

MASK64 = (1 << 64) - 1


def mean(xs):
    return math.fsum(xs) / len(xs)


def stddev(xs):
    """Sample standard deviation (n - 1 denominator); 0 for a single value."""
    if len(xs) < 2:
        return 0.0
    m = mean(xs)
    return math.sqrt(math.fsum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def quantile(xs, q):
    """Linear interpolation between order statistics at position q*(n-1)."""
    s = sorted(xs)
    pos = q * (len(s) - 1)
    lo = math.floor(pos)
    hi = min(lo + 1, len(s) - 1)
    frac = pos - lo
    return s[lo] + (s[hi] - s[lo]) * frac


def summary(xs) -> dict:
    m, sd = mean(xs), stddev(xs)
    half = 1.96 * sd / math.sqrt(len(xs))
    return {
        "mean": m,
        "stddev": sd,
        "ciL95": m - half,
        "ciH95": m + half,
        "min": min(xs),
        "q1": quantile(xs, 0.25),
        "median": quantile(xs, 0.5),
        "q3": quantile(xs, 0.75),
        "max": max(xs),
    }


def cellwise_summary(tables) -> dict:
    """tables: list (runs) of row-lists; returns stat -> nested row-lists."""
    rows, cols = len(tables[0]), len(tables[0][0])
    out = {}
    for r in range(rows):
        for c in range(cols):
            s = summary([t[r][c] for t in tables])
            for k, v in s.items():
                out.setdefault(k, [[0.0] * cols for _ in range(rows)])[r][c] = v
    return out


def cellwise_mean(mats):
    rows, cols = len(mats[0]), len(mats[0][0])
    return [[mean([m[r][c] for m in mats]) for c in range(cols)] for r in range(rows)]


def log2_sizes(n):
    out, v = [], 1
    while v <= n:
        out.append(v)
        v *= 2
    return out


def linspace(lo, hi, k):
    if k == 1:
        return [lo]
    return [lo + (hi - lo) * i / (k - 1) for i in range(k)]


def splitmix64_next(state):
    """Returns (new_state, output) of the reference generator."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def hostlist(text):
    """Expand SLURM-style host lists by repeated leftmost-bracket substitution."""
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
            continue
        depth += ch == "["
        depth -= ch == "]"
        cur += ch
    parts.append(cur)
    out = []
    for p in parts:
        out.extend(_expand_one(p))
    return out


def _expand_one(p):
    m = re.search(r"\[([^\]]*)\]", p)
    if not m:
        return [p]
    head, tail = p[: m.start()], p[m.end():]
    names = []
    for item in m.group(1).split(","):
        if "-" in item:
            a, b = item.split("-")
            names.extend(str(v).rjust(len(a), "0") for v in range(int(a), int(b) + 1))
        else:
            names.append(item)
    out = []
    for n in names:
        out.extend(_expand_one(head + n + tail))
    return out
