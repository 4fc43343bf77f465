"""Tokenisation shared by vocabulary building, lexicon counting and explanations.

Whitespace splitting, with leading and trailing punctuation peeled off
into one token per character. Punctuation inside a word is kept, so
``haven't`` and ``2-day`` stay whole.
"""
from __future__ import annotations

import unicodedata
from typing import List


def is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def is_word(token: str) -> bool:
    return any(ch.isalnum() for ch in token)


def normalize(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def tokenize(text: str, lower: bool = True) -> List[str]:
    text = normalize(text or "")
    if lower:
        text = text.lower()
    out: List[str] = []
    for chunk in text.split():
        i, j = 0, len(chunk)
        while i < j and is_punct(chunk[i]):
            i += 1
        while j > i and is_punct(chunk[j - 1]):
            j -= 1
        out.extend(chunk[:i])
        if i < j:
            out.append(chunk[i:j])
        out.extend(chunk[j:])
    return out


def words(text: str, lower: bool = True) -> List[str]:
    return [t for t in tokenize(text, lower) if is_word(t)]
