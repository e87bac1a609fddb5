"""Frequency-built subword vocabulary and greedy longest-match tokenization.

The vocabulary always contains the special tokens, every character seen in
the training corpus, and the "##"-prefixed continuation form of every such
character, so any text over the corpus alphabet tokenizes without [UNK].
Remaining slots up to the target size go to whole words and word-internal
fragments ranked by corpus frequency (ties broken lexicographically).
Truncation keeps the head of the text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import ConfigurationError, DataError

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
CLS_TOKEN = "[CLS]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN)
CONTINUATION_PREFIX = "##"
DEFAULT_MAX_LEN = 512

_PUNCT = re.compile(r"([.,;])")


def pretokenize(text: str) -> list[str]:
    """Lowercase, split punctuation into standalone tokens, then whitespace-split."""
    return _PUNCT.sub(r" \1 ", text.lower()).split()


@dataclass
class SubwordVocab:
    pieces: list[str]
    max_len: int = DEFAULT_MAX_LEN
    piece_ids: dict[str, int] = field(init=False)

    def __post_init__(self):
        if list(self.pieces[: len(SPECIAL_TOKENS)]) != list(SPECIAL_TOKENS):
            raise DataError("vocabulary must start with the special tokens")
        self.piece_ids = {p: i for i, p in enumerate(self.pieces)}
        if len(self.piece_ids) != len(self.pieces):
            raise DataError("vocabulary contains duplicate pieces")

    def __len__(self) -> int:
        return len(self.pieces)

    @property
    def pad_id(self) -> int:
        return self.piece_ids[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.piece_ids[UNK_TOKEN]

    @property
    def cls_id(self) -> int:
        return self.piece_ids[CLS_TOKEN]


def _candidate_counts(word_counts: dict[str, int]) -> dict[str, int]:
    """Frequency of every whole word and word-internal fragment.

    A fragment occurring in a word contributes that word's corpus count once,
    regardless of multiplicity inside the word.
    """
    counts: dict[str, int] = {}
    for word, n in word_counts.items():
        seen: set[str] = set()
        L = len(word)
        for i in range(L):
            for j in range(i + 1, L + 1):
                if i == 0 and j == L:
                    piece = word  # whole word
                elif i == 0:
                    piece = word[:j]
                else:
                    piece = CONTINUATION_PREFIX + word[i:j]
                seen.add(piece)
        for piece in seen:
            counts[piece] = counts.get(piece, 0) + n
    return counts


def build_vocab(corpus: Iterable[str], target_size: int, max_len: int = DEFAULT_MAX_LEN) -> SubwordVocab:
    """Build a deterministic subword vocabulary of at most target_size pieces.

    target_size must leave room for the mandatory base (specials plus both
    forms of every corpus character).
    """
    word_counts: dict[str, int] = {}
    for text in corpus:
        for word in pretokenize(text):
            word_counts[word] = word_counts.get(word, 0) + 1
    if not word_counts:
        raise ConfigurationError("cannot build a vocabulary from an empty corpus")

    chars = sorted({ch for word in word_counts for ch in word})
    base = list(SPECIAL_TOKENS) + chars + [CONTINUATION_PREFIX + ch for ch in chars]
    if target_size < len(base):
        raise ConfigurationError(
            f"target_size {target_size} below mandatory base of {len(base)} "
            f"({len(SPECIAL_TOKENS)} specials + {len(chars)} characters x 2 forms)"
        )

    candidates = _candidate_counts(word_counts)
    in_base = set(base)
    ranked = sorted(
        (p for p in candidates if p not in in_base),
        key=lambda p: (-candidates[p], p),
    )
    pieces = base + ranked[: target_size - len(base)]
    return SubwordVocab(pieces=pieces, max_len=max_len)


def _match_word(word: str, vocab: SubwordVocab) -> list[str] | None:
    """Greedy longest-match-first segmentation; None when a char is unknown."""
    out = []
    start = 0
    n = len(word)
    while start < n:
        end = n
        found = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = CONTINUATION_PREFIX + piece
            if piece in vocab.piece_ids:
                found = piece
                break
            end -= 1
        if found is None:
            return None
        out.append(found)
        start = end
    return out


def tokenize_to_pieces(text: str, vocab: SubwordVocab) -> list[str]:
    """[CLS] plus greedy wordpieces, truncated (head kept) to vocab.max_len."""
    pieces = [CLS_TOKEN]
    for word in pretokenize(text):
        matched = _match_word(word, vocab)
        pieces.extend(matched if matched is not None else [UNK_TOKEN])
    return pieces[: vocab.max_len]


def tokenize(text: str, vocab: SubwordVocab) -> list[int]:
    return [vocab.piece_ids[p] for p in tokenize_to_pieces(text, vocab)]


def detokenize(pieces: Iterable[str]) -> str:
    """Rejoin pieces (strip continuations); inverse of tokenization for
    [UNK]-free output."""
    words: list[str] = []
    for piece in pieces:
        if piece == CLS_TOKEN or piece == PAD_TOKEN:
            continue
        if piece.startswith(CONTINUATION_PREFIX):
            if not words:
                raise DataError("continuation piece with no preceding word")
            words[-1] += piece[len(CONTINUATION_PREFIX):]
        else:
            words.append(piece)
    return " ".join(words)


def save_vocab(vocab: SubwordVocab, path: str | Path):
    """One piece per line, UTF-8, specials first; reload is bit-exact."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#max_len={vocab.max_len}\n")
        for piece in vocab.pieces:
            fh.write(piece + "\n")


def load_vocab(path: str | Path) -> SubwordVocab:
    path = Path(path)
    if not path.exists():
        raise DataError(f"Missing vocabulary file: {path}")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0].startswith("#max_len="):
        raise DataError(f"{path}: missing max_len header")
    max_len = int(lines[0].split("=", 1)[1])
    pieces = [ln for ln in lines[1:] if ln]
    return SubwordVocab(pieces=pieces, max_len=max_len)
