"""Word lists and documents.

No natural-language data ships with the package, so dictionaries and
documents are synthesised deterministically from a seed: pronounceable
pseudo-words, Zipf-distributed running text with stopwords at the head of
the ranking, and an email-like vocabulary with corpus counts.
"""

from __future__ import annotations

from collections import Counter
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

_ONSETS = ["", "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w",
           "z", "bl", "br", "ch", "cl", "cr", "dr", "fl", "fr", "gl", "gr", "pl", "pr", "sc", "sh",
           "sk", "sl", "sm", "sn", "sp", "st", "str", "sw", "th", "tr", "wh"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ea", "ee", "ie", "oo", "ou", "y"]
_CODAS = ["", "", "", "n", "r", "s", "t", "l", "m", "nd", "ng", "nt", "rd", "st", "ck", "sh", "th"]

# rough running-text frequency order of the most common stopwords
_COMMON_STOPWORDS = [
    "the", "and", "to", "of", "a", "i", "in", "was", "he", "that", "it", "his", "her", "you",
    "with", "as", "for", "had", "is", "on", "at", "she", "but", "not", "be", "they", "so", "all",
    "him", "have", "me", "my", "were", "we", "this", "there", "from", "what", "would", "then",
    "them", "no", "up", "out", "an", "been", "one", "by", "when", "which", "do", "could", "their",
    "into", "if", "or", "are", "will", "did", "down", "very", "now", "your", "who", "more",
    "about", "can", "over", "some", "only", "before", "again", "how", "any", "after", "here",
    "its", "our", "than", "too", "just", "where", "through", "why", "those", "these", "such",
]


def load_stopwords() -> List[str]:
    text = resources.files("memsnoop.data").joinpath("stopwords.txt").read_text()
    return [w for w in text.split("\n") if w]


def read_wordlist(path) -> List[str]:
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]


def write_wordlist(path, words: Sequence[str]):
    Path(path).write_text("".join(w + "\n" for w in words))


def read_document(path) -> List[str]:
    return Path(path).read_text().split()


def write_document(path, words: Sequence[str], per_line: int = 12):
    lines = [" ".join(words[i:i + per_line]) for i in range(0, len(words), per_line)]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def pseudo_word(rng: np.random.Generator) -> str:
    n = int(rng.choice([1, 2, 2, 3, 3, 3, 4]))
    parts = []
    for _ in range(n):
        parts.append(_ONSETS[rng.integers(len(_ONSETS))])
        parts.append(_VOWELS[rng.integers(len(_VOWELS))])
    parts.append(_CODAS[rng.integers(len(_CODAS))])
    return "".join(parts)


def synthetic_dictionary(size: int = 49_500, seed: int = 0) -> List[str]:
    """Sorted word list of ``size`` entries that contains every stopword."""
    rng = np.random.default_rng(seed)
    words = set(load_stopwords())
    while len(words) < size:
        w = pseudo_word(rng)
        if len(w) >= 2:
            words.add(w)
    return sorted(words)


def ranked_vocabulary(dictionary: Sequence[str], size: int, seed: int,
                      stop_scale: float = 150.0) -> List[str]:
    """Pick ``size`` dictionary words ordered by rank.

    Stopwords take the first ranks and thin out with rank so that roughly
    half of the running text is stopwords, as in English prose.
    """
    rng = np.random.default_rng(seed)
    stops = load_stopwords()
    order = [w for w in _COMMON_STOPWORDS if w in stops]
    order += [w for w in stops if w not in order]
    content = [w for w in dictionary if w not in set(stops)]
    content = [content[i] for i in rng.permutation(len(content))]
    ranked: List[str] = []
    si = ci = 0
    for r in range(size):
        p_stop = 1.0 if r < 12 else 0.9 * np.exp(-(r - 12) / stop_scale)
        if si < len(order) and rng.random() < p_stop:
            ranked.append(order[si]); si += 1
        else:
            ranked.append(content[ci]); ci += 1
    return ranked


def zipf_counts(n_types: int, n_tokens: int, exponent: float = 1.0, offset: float = 2.7) -> np.ndarray:
    """Integer counts, each >= 1, summing exactly to ``n_tokens``, decreasing in rank."""
    if n_tokens < n_types:
        raise ValueError("need at least one token per type")
    shape = 1.0 / (np.arange(1, n_types + 1) + offset) ** exponent
    lo, hi = 0.0, float(n_tokens) / shape.min()
    for _ in range(200):
        a = (lo + hi) / 2
        if np.maximum(1.0, a * shape).sum() > n_tokens:
            hi = a
        else:
            lo = a
    f = np.maximum(1.0, lo * shape)
    counts = np.floor(f).astype(np.int64)
    short = n_tokens - counts.sum()
    counts[np.argsort(-(f - counts), kind="stable")[:short]] += 1
    return counts


def random_document(dictionary: Sequence[str], n_words: int = 10_000, seed: int = 1) -> List[str]:
    """Distinct dictionary words in random order."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(dictionary), size=n_words, replace=False)
    return [dictionary[i] for i in idx]


def prose_document(dictionary: Sequence[str], n_tokens: int = 39_342, n_unique: int = 2_538,
                   exponent: float = 1.0, spread: Optional[float] = 0.12, seed: int = 2) -> List[str]:
    """Zipfian running text with exactly ``n_unique`` distinct words.

    Stopwords are spread uniformly.  Each content word clusters around a
    random point of the text with standard deviation ``spread`` (a fraction
    of the document), as topic words do in real prose; ``spread=None``
    scatters every word uniformly.
    """
    vocab = ranked_vocabulary(dictionary, n_unique, seed)
    counts = zipf_counts(n_unique, n_tokens, exponent)
    tokens = np.repeat(np.arange(n_unique), counts)
    rng = np.random.default_rng(seed + 1)
    key = rng.random(len(tokens))
    if spread is not None:
        stops = set(load_stopwords())
        content = np.array([w not in stops for w in vocab])
        centre = rng.random(n_unique)
        c = content[tokens]
        key[c] = centre[tokens[c]] + spread * rng.standard_normal(int(c.sum()))
    return [vocab[i] for i in tokens[np.argsort(key, kind="stable")]]


def email_corpus(dictionary: Sequence[str], vocab_size: int = 7_000, n_tokens: int = 120_000,
                 exponent: float = 0.6, seed: int = 3) -> Tuple[List[str], Dict[str, int]]:
    """Vocabulary ranked by frequency plus its corpus counts."""
    vocab = ranked_vocabulary(dictionary, vocab_size, seed, stop_scale=60.0)
    counts = zipf_counts(vocab_size, n_tokens, exponent, offset=1.0)
    return vocab, {w: int(c) for w, c in zip(vocab, counts)}


def sample_queries(counts: Dict[str, int], n: int = 1_000, seed: int = 4) -> List[str]:
    """Query words drawn i.i.d. with probability proportional to corpus counts."""
    words = list(counts)
    p = np.asarray([counts[w] for w in words], dtype=float)
    rng = np.random.default_rng(seed)
    return [words[i] for i in rng.choice(len(words), size=n, p=p / p.sum())]


def repetition_stats(words: Sequence[str]) -> Dict[str, float]:
    c = Counter(words)
    return {"words": len(words), "unique": len(c),
            "mean_repeat": len(words) / len(c) if c else 0.0,
            "max_repeat": max(c.values()) if c else 0}
