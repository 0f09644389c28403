"""Shrinking-target machinery: target sequences, cells, hits, reachability.

Targets come in three kinds.  Per-time targets depend only on how far along
the environment path the orbit has travelled; per-word targets may depend on
the whole symbolic history; recurrence targets are the fixed points of the
cylinder maps, which turns quantitative return-time questions into
target-hitting ones.

Numerically, "the point lies in the attractor fiber at offset j" means the
point sits inside some admissible cylinder of the configured membership
depth starting at j.  All searches over symbolic addresses are depth-first
in lexicographic order with backtracking, so boundary points resolve
deterministically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .environment import OmegaPath
from .errors import EmptyCover, TargetOutsideFiber
from .geometry import MapFamily, WordMap, compose_word, fixed_point, inverse_orbit
from .potentials import Potential
from .subshift import DEFAULT_CYLINDER_CAP, Word, iter_cylinders
from .thermo import _word_cocycle

KINDS = ("per-time", "per-word", "recurrence")


@dataclass(frozen=True)
class TargetSpec:
    """How targets are generated.

    rule "fixed" uses `point` for every offset/word (validated against the
    fiber); rule "lex-smallest" projects the lexicographically smallest
    admissible word of the membership depth.  Recurrence ignores both and
    derives targets as fixed points.
    """

    kind: str
    rule: str = "lex-smallest"
    point: tuple[float, ...] | None = None
    membership_depth: int = 20

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"target kind must be one of {KINDS}, got {self.kind!r}")
        if self.rule not in ("lex-smallest", "fixed"):
            raise ValueError(f"target rule must be lex-smallest or fixed, got {self.rule!r}")
        if self.rule == "fixed" and self.point is None and self.kind != "recurrence":
            raise ValueError("rule 'fixed' needs a target point")


@dataclass(frozen=True)
class TargetCell:
    """Geometric cell of one word's contribution to the shrinking-target cover."""

    word: Word
    lo: np.ndarray
    hi: np.ndarray
    diameter: float

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0


@dataclass(frozen=True)
class HitRecord:
    word: Word
    lhs: float
    rhs: float


@dataclass(frozen=True)
class ReachabilityReport:
    """Per-word smallest extension length making the target hittable."""

    depth: int
    results: tuple[tuple[Word, int | None], ...]
    max_k: int
    failures: tuple[Word, ...]

    @property
    def ok(self) -> bool:
        return not self.failures


class TargetResolver:
    """Caches target points and symbolic-address walks for one (path, maps, spec)."""

    def __init__(self, path: OmegaPath, maps: MapFamily, spec: TargetSpec):
        self.path = path
        self.maps = maps
        self.spec = spec
        self._tol = 1e-9 * float(np.max(maps.widths))
        self._per_time: dict[int, np.ndarray] = {}

    # -- symbolic address machinery ------------------------------------------

    def descend(
        self,
        z: np.ndarray,
        offset: int,
        max_depth: int,
        allowed_first=None,
        stop: Callable[[tuple, tuple], bool] | None = None,
    ) -> Word | None:
        """Lex-smallest admissible address of z from `offset`.

        Without `stop`, returns the full max_depth address (or None if z
        escapes every cylinder).  With `stop`, returns the shortest prefix
        along that address whose cylinder bounding box satisfies the
        predicate (called with the box corners as float tuples).
        """
        path, maps, tol = self.path, self.maps, self._tol
        if maps.dim == 1 and maps.is_similarity:
            return self._descend_1d(z, offset, max_depth, allowed_first, stop)

        def rec(word: Word, wm: WordMap, k: int) -> Word | None:
            if len(word) > 0 and stop is not None:
                blo, bhi = wm.box()
                if stop(tuple(blo), tuple(bhi)):
                    return word
            if k == max_depth:
                return word if stop is None else None
            state = path.state(offset + k)
            prev = word.symbols[-1] if k > 0 else None
            A = path.matrix(offset + k - 1) if k > 0 else None
            for s in range(1, path.alphabet(offset + k) + 1):
                if k == 0 and allowed_first is not None and s not in allowed_first:
                    continue
                if k > 0 and A[prev - 1, s - 1] != 1:
                    continue
                wm2 = wm.extend(state, s)
                blo, bhi = wm2.box()
                if np.all(z >= blo - tol) and np.all(z <= bhi + tol):
                    out = rec(word.extend(s), wm2, k + 1)
                    if out is not None:
                        return out
            return None

        return rec(Word((), offset), WordMap(maps), 0)

    def _descend_1d(self, z, offset, max_depth, allowed_first, stop) -> Word | None:
        path, maps, tol = self.path, self.maps, self._tol
        zf = float(z[0])
        lo0 = float(maps.ambient_lo[0])
        width = float(maps.ambient_hi[0]) - lo0
        mapdata = [[(m.offset[0], m.ratio) for m in sm] for sm in maps.maps]
        succ_cache: dict[int, tuple] = {}

        def successors(k: int) -> tuple:
            if k not in succ_cache:
                A = np.asarray(path.matrix(offset + k - 1))
                succ_cache[k] = tuple(
                    tuple(int(j) + 1 for j in np.nonzero(A[i])[0])
                    for i in range(A.shape[0])
                )
            return succ_cache[k]

        def rec(syms: list, c: float, rho: float, k: int) -> Word | None:
            if syms and stop is not None and stop((c,), (c + rho * width,)):
                return Word(tuple(syms), offset)
            if k == max_depth:
                return Word(tuple(syms), offset) if stop is None else None
            state = path.state(offset + k)
            if k == 0:
                options = [
                    s
                    for s in range(1, path.alphabet(offset) + 1)
                    if allowed_first is None or s in allowed_first
                ]
            else:
                options = successors(k)[syms[-1] - 1]
            md = mapdata[state]
            for s in options:
                b, r = md[s - 1]
                c2 = c + rho * (b - lo0)
                rho2 = rho * r
                if c2 - tol <= zf <= c2 + rho2 * width + tol:
                    syms.append(s)
                    out = rec(syms, c2, rho2, k + 1)
                    if out is not None:
                        return out
                    syms.pop()
            return None

        return rec([], lo0, 1.0, 0)

    def in_fiber(self, z: np.ndarray, offset: int, allowed_first=None) -> bool:
        depth = min(self.spec.membership_depth, self.path.horizon - offset)
        if depth <= 0:
            return True
        return self.descend(z, offset, depth, allowed_first=allowed_first) is not None

    def _lex_smallest_point(self, offset: int) -> np.ndarray:
        depth = min(self.spec.membership_depth, self.path.horizon - offset)
        syms = [1]
        for k in range(1, depth):
            A = self.path.matrix(offset + k - 1)
            syms.append(int(np.nonzero(A[syms[-1] - 1])[0][0]) + 1)
        return compose_word(self.path, self.maps, Word(tuple(syms), offset)).apply(
            self.maps.anchor_point
        )

    # -- target points ---------------------------------------------------------

    def target_at(self, offset: int) -> np.ndarray:
        """Per-time target point in the fiber at `offset`."""
        if offset not in self._per_time:
            if self.spec.rule == "fixed":
                z = np.asarray(self.spec.point, dtype=float)
                if not self.in_fiber(z, offset):
                    raise TargetOutsideFiber(
                        f"target {z.tolist()} is outside the depth-"
                        f"{self.spec.membership_depth} fiber at offset {offset}"
                    )
            else:
                z = self._lex_smallest_point(offset)
            self._per_time[offset] = z
        return self._per_time[offset]

    def target_for_word(self, word: Word) -> np.ndarray:
        """Target point in the fiber at the word's end offset."""
        if self.spec.kind == "recurrence":
            return fixed_point(self.path, self.maps, word)
        if self.spec.kind == "per-time":
            return self.target_at(word.end_offset)
        if self.spec.rule == "fixed":
            z = np.asarray(self.spec.point, dtype=float)
            if not self.in_fiber(z, word.end_offset):
                raise TargetOutsideFiber(
                    f"target {z.tolist()} is outside the fiber at offset "
                    f"{word.end_offset} (word {word})"
                )
            return z
        return self._lex_smallest_point(word.end_offset)


def build_target_cover(
    path: OmegaPath,
    maps: MapFamily,
    phi: Potential,
    targets: TargetSpec,
    depth_range: tuple[int, int],
    cap: int = DEFAULT_CYLINDER_CAP,
) -> list[TargetCell]:
    """Cells g^v(B(z, exp(S_|v| phi)) intersected with the ambient box.

    One cell per admissible word with length in depth_range; empty
    intersections are dropped.  Exact in d=1; in d=2 the cell box and
    diameter are upper bounds (bounding box through the composed map),
    which is the right direction for an upper cover.
    """
    resolver = TargetResolver(path, maps, targets)
    lo_a, hi_a = maps.ambient_lo, maps.ambient_hi
    cells: list[TargetCell] = []
    for n in range(depth_range[0], depth_range[1] + 1):
        for word in iter_cylinders(path, 0, n, cap=cap):
            z = resolver.target_for_word(word)
            radius = math.exp(_word_cocycle(path, maps, phi, word, z))
            blo = np.maximum(z - radius, lo_a)
            bhi = np.minimum(z + radius, hi_a)
            if np.any(bhi < blo):
                continue
            wm = compose_word(path, maps, word)
            if maps.dim == 1:
                a = wm.apply(blo)
                b = wm.apply(bhi)
                clo, chi = np.minimum(a, b), np.maximum(a, b)
                diam = float(chi[0] - clo[0])
            else:
                corners = [
                    wm.apply(np.array([x, y]))
                    for x in (blo[0], bhi[0])
                    for y in (blo[1], bhi[1])
                ]
                pts = np.array(corners)
                clo, chi = pts.min(axis=0), pts.max(axis=0)
                region_diam = min(2.0 * radius, float(np.linalg.norm(bhi - blo)))
                diam = wm.scale() * region_diam
            cells.append(TargetCell(word=word, lo=clo, hi=chi, diameter=diam))
    return cells


def hit_test(
    path: OmegaPath,
    maps: MapFamily,
    phi: Potential,
    targets: TargetSpec,
    x: np.ndarray,
    max_depth: int,
) -> list[HitRecord]:
    """All words v with x in U^v and ||T^v x - z|| <= exp(S_|v| phi(x)).

    The cocycle sum runs along the true inverse orbit of x.  For the
    recurrence kind the comparison point is x itself.
    """
    resolver = TargetResolver(path, maps, targets)
    x = np.asarray(x, dtype=float)
    tol = 1e-9 * float(np.max(maps.widths))
    records: list[HitRecord] = []

    def rec(word: Word, y: np.ndarray, s_phi: float, k: int) -> None:
        if k > 0:
            if targets.kind == "recurrence":
                z = x
            elif targets.kind == "per-time":
                z = resolver.target_at(k)
            else:
                z = resolver.target_for_word(word)
            lhs = float(np.linalg.norm(y - z))
            rhs = math.exp(s_phi)
            if lhs <= rhs:
                records.append(HitRecord(word=word, lhs=lhs, rhs=rhs))
        if k == max_depth:
            return
        state = path.state(k)
        A = path.matrix(k - 1) if k > 0 else None
        for s in range(1, path.alphabet(k) + 1):
            if k > 0 and A[word.symbols[-1] - 1, s - 1] != 1:
                continue
            img = WordMap(maps).extend(state, s)
            blo, bhi = img.box()
            if np.all(y >= blo - tol) and np.all(y <= bhi + tol):
                rec(
                    word.extend(s),
                    maps.invert(state, s, y),
                    s_phi + phi.value(state, s, y),
                    k + 1,
                )

    rec(Word((), 0), x, 0.0, 0)
    records.sort(key=lambda r: (len(r.word), r.word.symbols))
    return records


def hit_margin(
    path: OmegaPath,
    maps: MapFamily,
    phi: Potential,
    word: Word,
    x: np.ndarray,
    z: np.ndarray | None = None,
) -> tuple[float, float]:
    """(||T^word x - z||, exp(S_|word| phi(x))) with the cocycle along x's orbit.

    z defaults to x itself, the recurrence comparison.
    """
    orbit = inverse_orbit(path, maps, word, np.asarray(x, dtype=float))
    s_phi = 0.0
    for k, s in enumerate(word.symbols):
        s_phi += phi.value(path.state(word.start_offset + k), s, orbit[k])
    ref = orbit[0] if z is None else np.asarray(z, dtype=float)
    return float(np.linalg.norm(orbit[-1] - ref)), math.exp(s_phi)


def sample_target_points(
    path: OmegaPath,
    maps: MapFamily,
    phi: Potential,
    targets: TargetSpec,
    count: int,
    depth: int,
    seed: int,
    cap: int = DEFAULT_CYLINDER_CAP,
) -> list[np.ndarray]:
    """Deterministic cell-center sample, cycling lexicographically from a seeded start."""
    cells = build_target_cover(path, maps, phi, targets, (depth, depth), cap=cap)
    if not cells:
        raise EmptyCover(f"no target cells at depth {depth}")
    start = seed % len(cells)
    return [cells[(start + i) % len(cells)].center for i in range(count)]


def verify_target_reachability(
    path: OmegaPath,
    maps: MapFamily,
    targets: TargetSpec,
    depth: int,
    gap_bound: int,
    cap: int = DEFAULT_CYLINDER_CAP,
) -> ReachabilityReport:
    """For each depth-`depth` word, the smallest extension after which the
    target point lies in the word's follower fiber.

    Returns both the uniform bound (max over successful words) and the raw
    per-word table; words with no extension of length <= gap_bound are
    reported as failures.
    """
    resolver = TargetResolver(path, maps, targets)
    results: list[tuple[Word, int | None]] = []
    for word in iter_cylinders(path, 0, depth, cap=cap):
        found: int | None = None
        for k in range(gap_bound + 1):
            exts = (
                [Word((), word.end_offset)]
                if k == 0
                else iter_cylinders(path, word.end_offset, k, cap=cap)
            )
            for ext in exts:
                if len(ext) > 0:
                    A = path.matrix(word.end_offset - 1)
                    if A[word.symbols[-1] - 1, ext.symbols[0] - 1] != 1:
                        continue
                    full = Word(word.symbols + ext.symbols, word.start_offset)
                else:
                    full = word
                try:
                    z = resolver.target_for_word(full)
                except TargetOutsideFiber:
                    continue
                followers = _followers(path, full)
                if resolver.in_fiber(z, full.end_offset, allowed_first=followers):
                    found = k
                    break
            if found is not None:
                break
        results.append((word, found))
    failures = tuple(w for w, k in results if k is None)
    ks = [k for _, k in results if k is not None]
    return ReachabilityReport(
        depth=depth,
        results=tuple(results),
        max_k=max(ks) if ks else 0,
        failures=failures,
    )


def _followers(path: OmegaPath, word: Word) -> set[int]:
    if word.end_offset >= path.horizon + 1:
        return set(range(1, path.alphabet(path.horizon) + 1))
    if len(word) == 0:
        return set(range(1, path.alphabet(word.start_offset) + 1))
    A = path.matrix(word.end_offset - 1)
    return {int(j) + 1 for j in np.nonzero(A[word.symbols[-1] - 1])[0]}
