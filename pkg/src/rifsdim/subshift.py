"""Combinatorics of the random subshift of finite type.

Words are finite symbol strings pinned to a position along an OmegaPath;
admissibility at offset k is governed by the 0/1 matrix between the
environment states at k and k+1.  Symbols are 1-based throughout.

The joining operation glues two words across a mixing gap through a bridge
word.  With gap p the bridge has p-1 symbols, so |w * w2| = |w| + |w2| + p - 1
and w2 must start p-1 offsets after w ends.  The bridge for a junction is
always the lexicographically smallest admissible connector, which makes every
construction built on joins reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .environment import OmegaPath
from .errors import (
    ExplosionGuard,
    GapTooSmall,
    NoBridge,
    NotMixingWithinBound,
    OutOfHorizon,
)

DEFAULT_CYLINDER_CAP = 10_000_000


@dataclass(frozen=True)
class Word:
    """An admissible-word candidate: symbols plus its start offset."""

    symbols: tuple[int, ...]
    start_offset: int = 0

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def end_offset(self) -> int:
        """Offset of the fiber the word maps into (one past its last symbol)."""
        return self.start_offset + len(self.symbols)

    def extend(self, symbol: int) -> "Word":
        return Word(self.symbols + (symbol,), self.start_offset)

    def prefix(self, n: int) -> "Word":
        return Word(self.symbols[:n], self.start_offset)

    def drop_last(self) -> "Word":
        return Word(self.symbols[:-1], self.start_offset)

    def __str__(self) -> str:
        return ",".join(str(s) for s in self.symbols)


def word_from_str(text: str, start_offset: int = 0) -> Word:
    """Parse the comma-separated serialization back into a Word."""
    syms = tuple(int(t) for t in text.split(",")) if text else ()
    return Word(syms, start_offset)


@dataclass(frozen=True)
class MixingCertificate:
    """Witness that the matrix product starting at `offset` turns positive."""

    M: int
    offset: int


def _check_span(path: OmegaPath, start: int, n: int) -> None:
    if start < 0:
        raise OutOfHorizon(f"negative start offset {start}")
    if n >= 1 and start + n - 1 > path.horizon:
        raise OutOfHorizon(
            f"word of length {n} at offset {start} exceeds horizon {path.horizon}"
        )


def is_admissible(path: OmegaPath, word: Word) -> bool:
    """True iff every symbol is in range and every transition is allowed."""
    n = len(word)
    _check_span(path, word.start_offset, n)
    for k, s in enumerate(word.symbols):
        if not 1 <= s <= path.alphabet(word.start_offset + k):
            return False
    for k in range(n - 1):
        A = path.matrix(word.start_offset + k)
        if A[word.symbols[k] - 1, word.symbols[k + 1] - 1] != 1:
            return False
    return True


def count_cylinders(path: OmegaPath, offset: int, n: int) -> int:
    """Number of admissible words of length n at `offset`.

    Computed by the vector recursion count = 1^T A_0 ... A_{n-2} 1 without
    enumerating; exact (Python integers, no overflow).
    """
    if n < 1:
        raise ValueError("cylinder length must be >= 1")
    _check_span(path, offset, n)
    counts = [1] * path.alphabet(offset + n - 1)
    for k in range(n - 2, -1, -1):
        A = path.matrix(offset + k)
        counts = [
            sum(c for j, c in enumerate(counts) if A[i, j])
            for i in range(path.alphabet(offset + k))
        ]
    return sum(counts)


def iter_cylinders(
    path: OmegaPath, offset: int, n: int, cap: int = DEFAULT_CYLINDER_CAP
) -> Iterator[Word]:
    """Yield admissible words of length n at `offset` in lexicographic order."""
    if n < 1:
        raise ValueError("cylinder length must be >= 1")
    _check_span(path, offset, n)
    if count_cylinders(path, offset, n) > cap:
        raise ExplosionGuard(
            f"{count_cylinders(path, offset, n)} cylinders at depth {n} "
            f"exceeds cap {cap}"
        )

    matrices = [path.matrix(offset + k) for k in range(n - 1)]
    alphabets = [path.alphabet(offset + k) for k in range(n)]

    def walk(prefix: list[int], k: int) -> Iterator[Word]:
        if k == n:
            yield Word(tuple(prefix), offset)
            return
        for s in range(1, alphabets[k] + 1):
            if k > 0 and matrices[k - 1][prefix[-1] - 1, s - 1] != 1:
                continue
            prefix.append(s)
            yield from walk(prefix, k + 1)
            prefix.pop()

    yield from walk([], 0)


def enumerate_cylinders(
    path: OmegaPath, offset: int, n: int, cap: int = DEFAULT_CYLINDER_CAP
) -> list[Word]:
    """All admissible words of length n at `offset`, lexicographically ordered."""
    return list(iter_cylinders(path, offset, n, cap=cap))


def mixing_index(path: OmegaPath, offset: int, max_m: int) -> MixingCertificate:
    """Smallest M <= max_m with A(offset)...A(offset+M-1) entrywise positive."""
    if max_m < 1:
        raise ValueError("max_m must be >= 1")
    if offset + max_m > path.horizon:
        raise OutOfHorizon(
            f"mixing probe needs offset+max_m <= horizon "
            f"({offset}+{max_m} > {path.horizon})"
        )
    prod = None
    for m in range(1, max_m + 1):
        A = path.matrix(offset + m - 1).astype(bool)
        prod = A if prod is None else prod @ A
        if prod.all():
            return MixingCertificate(M=m, offset=offset)
    raise NotMixingWithinBound(
        f"no positive product within {max_m} steps from offset {offset}"
    )


def _bridge(path: OmegaPath, junction: int, s_from: int, s_to: int, gap: int) -> tuple[int, ...]:
    """Lex-smallest admissible filler of length gap-1 between s_from and s_to.

    `junction` is the offset of s_from; s_to sits at junction+gap.
    """
    _check_span(path, junction, gap + 1)

    target_len = gap - 1

    def walk(prev_sym: int, k: int, acc: list[int]) -> tuple[int, ...] | None:
        # positions junction+1 .. junction+gap-1 hold the bridge
        if k == target_len:
            A = path.matrix(junction + gap - 1)
            if A[prev_sym - 1, s_to - 1] == 1:
                return tuple(acc)
            return None
        pos = junction + 1 + k
        A = path.matrix(pos - 1)
        for s in range(1, path.alphabet(pos) + 1):
            if A[prev_sym - 1, s - 1] != 1:
                continue
            acc.append(s)
            out = walk(s, k + 1, acc)
            if out is not None:
                return out
            acc.pop()
        return None

    out = walk(s_from, 0, [])
    if out is None:
        raise NoBridge(
            f"no admissible connector of length {gap - 1} from symbol {s_from} "
            f"at offset {junction} to symbol {s_to}"
        )
    return out


def join_words(path: OmegaPath, w: Word, w2: Word, gap: int) -> Word:
    """Join w and w2 through the canonical bridge across a gap.

    Requires w2 to start gap-1 offsets after w ends; the result has length
    |w| + |w2| + gap - 1 and is admissible whenever both inputs are.  The
    bridge depends only on (last symbol of w, first symbol of w2, junction
    offset).
    """
    if gap < 1:
        raise GapTooSmall(f"gap must be >= 1, got {gap}")
    if len(w) == 0 or len(w2) == 0:
        raise ValueError("cannot join empty words")
    junction = w.start_offset + len(w) - 1
    expected_start = junction + gap
    if w2.start_offset != expected_start:
        raise ValueError(
            f"second word must start at offset {expected_start}, "
            f"got {w2.start_offset}"
        )
    bridge = _bridge(path, junction, w.symbols[-1], w2.symbols[0], gap)
    return Word(w.symbols + bridge + w2.symbols, w.start_offset)


def cylinder_rows(
    path: OmegaPath, offset: int, n: int, cap: int = DEFAULT_CYLINDER_CAP
) -> list[tuple[int, int, str, int]]:
    """CSV-ready rows (offset, n, word, admissible_count) for one cylinder level."""
    words = enumerate_cylinders(path, offset, n, cap=cap)
    return [(offset, n, str(w), len(words)) for w in words]
