"""Caption normalisation and the word-matching score."""

from __future__ import annotations

import math
import re

_PUNCT = re.compile(r"[^\w\s]+")

TEXT_MATCH = 5
TEXT_MISS = 1


def normalize_text(text: str) -> str:
    """Lowercase, punctuation replaced by spaces, whitespace collapsed."""
    return " ".join(_PUNCT.sub(" ", text.lower()).replace("_", " ").split())


def tokens(text: str) -> list[str]:
    return normalize_text(text).split()


def plural_forms(token: str) -> frozenset[str]:
    """The token and its candidate singulars (trailing "s" and "es" removed)."""
    forms = {token}
    if len(token) > 1 and token.endswith("s"):
        forms.add(token[:-1])
    if len(token) > 2 and token.endswith("es"):
        forms.add(token[:-2])
    return frozenset(forms)


def tokens_match(a: str, b: str) -> bool:
    return bool(plural_forms(a) & plural_forms(b))


def contains_phrase(caption: str, prompt: str) -> bool:
    """True if the prompt tokens occur as a contiguous run of caption tokens."""
    cap = tokens(caption)
    want = tokens(prompt)
    if not want:
        return False
    span = len(want)
    for start in range(len(cap) - span + 1):
        if all(tokens_match(cap[start + i], want[i]) for i in range(span)):
            return True
    return False


def score_text(caption: str, prompt: str) -> int:
    if not caption or not prompt:
        raise ValueError("caption and prompt must be non-empty")
    return TEXT_MATCH if contains_phrase(caption, prompt) else TEXT_MISS


def prompt_recall(caption: str, prompt: str) -> float:
    """Fraction of distinct prompt tokens that appear anywhere in the caption."""
    cap = tokens(caption)
    want = sorted(set(tokens(prompt)))
    if not want:
        return 0.0
    hit = sum(any(tokens_match(w, c) for c in cap) for w in want)
    return hit / len(want)


def stub_semantic_score(caption: str, prompt: str) -> int:
    """Offline judge: 5 on a word match, else 5 minus the token distance bucket (1..4)."""
    if score_text(caption, prompt) == TEXT_MATCH:
        return 5
    distance = 1.0 - prompt_recall(caption, prompt)
    bucket = min(max(math.ceil(4.0 * distance), 1), 4)
    return 5 - bucket
