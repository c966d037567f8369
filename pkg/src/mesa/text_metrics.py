"""Edit-distance based text recovery metrics.

All distances count Unicode code points.  ``S`` in the text recovery score
caps the number of edits considered; 100 by default.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

DEFAULT_S = 100


def levenshtein(o: str, r: str) -> int:
    """Unit-cost insert/delete/substitute distance between two strings."""
    if o == r:
        return 0
    if len(o) < len(r):
        o, r = r, o
    if not r:
        return len(o)
    prev = list(range(len(r) + 1))
    for i, co in enumerate(o, 1):
        cur = [i]
        for j, cr in enumerate(r, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (co != cr)))
        prev = cur
    return prev[-1]


def text_recovery_score(o: str, r: str, s: int = DEFAULT_S) -> float:
    return trs_from_distance(levenshtein(o, r), s)


def trs_from_distance(ld: int, s: int = DEFAULT_S) -> float:
    if int(s) != s or s < 1:
        raise ValueError(f"s must be a positive integer, got {s!r}")
    if ld < 0:
        raise ValueError(f"edit distance must be non-negative, got {ld}")
    return 1.0 - min(1.0, ld / s)


def log_lev_similarity(ld: int) -> float:
    """``1 / (1 + log10(1 + ld))``: 1 for a perfect match, towards 0 as ``ld`` grows."""
    if ld < 0:
        raise ValueError(f"edit distance must be non-negative, got {ld}")
    return 1.0 / (1.0 + math.log10(1.0 + ld))


def normalize_text(text: str) -> str:
    """Uppercase and collapse runs of whitespace to single spaces."""
    return " ".join(text.upper().split())


@dataclass(frozen=True)
class MetricScore:
    ld: int
    trs: float
    lls: float
    s_cap: int

    def to_dict(self) -> dict:
        return asdict(self)


def score_text(o: str, r: str, s: int = DEFAULT_S, normalize: bool = False) -> MetricScore:
    if normalize:
        o, r = normalize_text(o), normalize_text(r)
    ld = levenshtein(o, r)
    return MetricScore(ld, trs_from_distance(ld, s), log_lev_similarity(ld), s)
