"""Nested cylinder families carrying a mass-distributed measure.

The construction alternates three moves per generation, at every current
leaf:

1. enumerate candidate extensions of a scheduled depth (joined to the leaf
   through a mixing-gap bridge),
2. greedily select a maximal family whose doubled balls (radius twice the
   cylinder diameter, centered at the anchors) are pairwise disjoint, then
   optionally thin it to an evenly spread subfamily of a configured size,
3. escort each kept candidate toward the current target: bridge to the
   target's address symbol, then extend along that address until the whole
   escorted cylinder maps inside the shrinking ball around the target.

Child masses split the parent mass proportionally to the Gibbs weights of
the kept candidates at the solved target root, so the leaf measure is the
computable surrogate of the natural measure on the limit set.  The builder
verifies the escorted-diameter growth bound and the hit condition at every
node and refuses schedules that violate them.

Ball queries against the finished tree are exact: a ball's mass is the sum
of the masses of the deepest-generation boxes it intersects, with whole
subtrees short-circuited when their box lies inside the ball.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environment import OmegaPath
from .errors import EmptySelection, OutOfHorizon, ScheduleInfeasible
from .geometry import CylinderBox, MapFamily, WordMap, compose_word, cylinder_box
from .potentials import Potential
from .subshift import (
    DEFAULT_CYLINDER_CAP,
    Word,
    count_cylinders,
    iter_cylinders,
    _bridge,
)
from .targets import TargetResolver, TargetSpec
from .thermo import _word_cocycle, solve_pressure_root


@dataclass(frozen=True)
class ScheduleSpec:
    """Per-generation knobs of the nesting construction.

    epsilons loosen the escorted-diameter growth bound (strictly
    decreasing); p_min are the candidate extension depths (strictly
    increasing); gap is the joining gap and must be at least the mixing
    index wherever a join happens.  max_children, when given, thins each
    kept family to an evenly spread subfamily of that size per generation
    (None keeps the full maximal family).
    """

    generations: int
    epsilons: tuple[float, ...]
    p_min: tuple[int, ...]
    gap: int
    max_children: tuple[int | None, ...] | None = None
    root_level: int = 10

    def __post_init__(self) -> None:
        g = self.generations
        if g < 1:
            raise ValueError("need at least one generation")
        if len(self.epsilons) != g or len(self.p_min) != g:
            raise ValueError("epsilons and p_min must have one entry per generation")
        if any(e <= 0 for e in self.epsilons):
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        if any(p < 1 for p in self.p_min):
            raise ValueError("extension depths must be >= 1")
        if any(b <= a for a, b in zip(self.p_min, self.p_min[1:])):
            raise ValueError("p_min must be strictly increasing")
        if self.gap < 1:
            raise ValueError("gap must be >= 1")
        if self.max_children is not None:
            if len(self.max_children) != g:
                raise ValueError("max_children needs one entry per generation")
            if any(m is not None and m < 1 for m in self.max_children):
                raise ValueError("max_children entries must be >= 1 or None")

    def cap_for(self, generation: int) -> int | None:
        if self.max_children is None:
            return None
        return self.max_children[generation - 1]


@dataclass
class MoranNode:
    """One cylinder of the nested family, with its share of the measure."""

    word: Word
    box: CylinderBox
    mass: float
    generation: int
    children: tuple["MoranNode", ...] = ()
    pre_box: CylinderBox | None = None
    hit_len: int = 0
    target: np.ndarray | None = None

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def leaves(self) -> list["MoranNode"]:
        if not self.children:
            return [self]
        out: list[MoranNode] = []
        for c in self.children:
            out.extend(c.leaves())
        return out


@dataclass(frozen=True)
class ProbeRow:
    center: tuple[float, ...]
    radius: float
    mass: float
    exponent: float


def _reachable_row(path: OmegaPath, last_symbol: int, end_offset: int, gap: int) -> np.ndarray:
    """Boolean row of symbols at end_offset+gap-1 reachable across the gap."""
    row = np.zeros(path.alphabet(end_offset - 1), dtype=np.int64)
    row[last_symbol - 1] = 1
    for k in range(gap):
        row = np.minimum(row @ np.asarray(path.matrix(end_offset - 1 + k)), 1)
    return row > 0


class _Candidate:
    __slots__ = ("bridge", "symbols", "anchor", "diam", "wexp")

    def __init__(self, bridge, symbols, anchor, diam, wexp):
        self.bridge = bridge
        self.symbols = symbols
        self.anchor = anchor
        self.diam = diam
        self.wexp = wexp


def _enumerate_candidates(
    path: OmegaPath,
    maps: MapFamily,
    weight_pot: Potential,
    leaf: MoranNode,
    offset: int,
    p: int,
    gap: int,
    cap: int,
) -> list[_Candidate]:
    """Bridged depth-p extensions below a leaf with anchors, diameters, weights.

    Anchors and diameters are computed in the leaf-local fiber frame (the
    composition starts from the identity at the junction, not from the leaf
    map).  Ball disjointness is scale-invariant, so for similarities the
    greedy selection in this frame matches the absolute one exactly, and it
    stays well conditioned at depths where absolute positions of sibling
    cylinders collapse onto the same float.  The weight exponent accumulates
    the mass-splitting potential over the extension only; the shared prefix
    cancels in the sibling normalization.
    """
    if offset + p - 1 > path.horizon:
        raise ScheduleInfeasible(
            f"extension depth {p} at offset {offset} exceeds horizon {path.horizon}"
        )
    if count_cylinders(path, offset, p) > cap:
        raise ScheduleInfeasible(
            f"{count_cylinders(path, offset, p)} candidates at depth {p} "
            f"exceeds the cylinder cap {cap}"
        )

    is_root = len(leaf.word) == 0
    if is_root:
        first_options: list[tuple[tuple[int, ...], int]] = [
            ((), s) for s in range(1, path.alphabet(offset) + 1)
        ]
    else:
        reach = _reachable_row(path, leaf.word.symbols[-1], leaf.word.end_offset, gap)
        first_options = []
        for s in range(1, path.alphabet(offset) + 1):
            if reach[s - 1]:
                bridge = _bridge(
                    path, leaf.word.end_offset - 1, leaf.word.symbols[-1], s, gap
                )
                first_options.append((bridge, s))

    fast = maps.dim == 1 and maps.is_similarity and weight_pot.is_constant
    lo0 = float(maps.ambient_lo[0]) if maps.dim == 1 else 0.0
    x0 = maps.anchor_point
    x0f = float(x0[0]) if maps.dim == 1 else 0.0
    unit = maps.ambient_diameter

    # per-level map data and allowed-successor tables keep the hot recursion
    # free of numpy scalar indexing
    level_maps = []
    for k in range(p):
        st = path.state(offset + k)
        level_maps.append(
            tuple(
                (m.offset[0] if maps.dim == 1 else 0.0, m.ratio,
                 weight_pot.table[st][s] if weight_pot.is_constant else 0.0)
                for s, m in enumerate(maps.maps[st])
            )
        )
    successors = []
    for k in range(p - 1):
        A = np.asarray(path.matrix(offset + k))
        successors.append(
            tuple(tuple(int(j) + 1 for j in np.nonzero(A[i])[0]) for i in range(A.shape[0]))
        )

    out: list[_Candidate] = []
    dx0 = x0f - lo0
    plast = p - 1
    out_append = out.append

    for bridge, s0 in first_options:
        base = WordMap(maps)
        for k, bs in enumerate(bridge):
            base = base.extend(path.state(leaf.word.end_offset + k), bs)

        if fast:
            cf, rho0, _ = base._affine

            def rec_fast(sym, k, c, rho, wexp, acc):
                b, r, wv = level_maps[k][sym - 1]
                c2 = c + rho * (b - lo0)
                rho2 = rho * r
                wexp2 = wexp + wv
                acc.append(sym)
                if k == plast:
                    out_append(
                        _Candidate(
                            bridge, tuple(acc), c2 + rho2 * dx0, rho2 * unit, wexp2
                        )
                    )
                else:
                    for s2 in successors[k][sym - 1]:
                        rec_fast(s2, k + 1, c2, rho2, wexp2, acc)
                acc.pop()

            rec_fast(s0, 0, float(cf), float(rho0), 0.0, [])
        else:

            def rec(sym, k, wm, wexp, acc):
                st = path.state(offset + k)
                wm2 = wm.extend(st, sym)
                acc.append(sym)
                if k == plast:
                    word = Word(tuple(acc), offset)
                    if weight_pot.is_constant:
                        w2 = wexp + level_maps[k][sym - 1][2]
                    else:
                        w2 = _word_cocycle(path, maps, weight_pot, word, x0)
                    anchor = wm2.apply(x0)
                    out_append(
                        _Candidate(
                            bridge,
                            tuple(acc),
                            anchor if maps.dim > 1 else float(anchor[0]),
                            wm2.diameter(),
                            w2,
                        )
                    )
                else:
                    w2 = wexp + (level_maps[k][sym - 1][2] if weight_pot.is_constant else 0.0)
                    for s2 in successors[k][sym - 1]:
                        rec(s2, k + 1, wm2, w2, acc)
                acc.pop()

            rec(s0, 0, base, 0.0, [])
    return out


def _greedy_disjoint(maps: MapFamily, cands: list[_Candidate]) -> list[_Candidate]:
    """Maximal subfamily whose doubled balls around the anchors are disjoint."""
    if maps.dim == 1:
        ordered = sorted(cands, key=lambda c: c.anchor)
        sel: list[_Candidate] = []
        dmax = 0.0
        for c in ordered:
            ok = True
            for prev in reversed(sel):
                if c.anchor - prev.anchor > 2.0 * (c.diam + dmax):
                    break
                if c.anchor - prev.anchor <= 2.0 * (c.diam + prev.diam):
                    ok = False
                    break
            if ok:
                sel.append(c)
                dmax = max(dmax, c.diam)
        return sel
    sel = []
    for c in cands:
        ok = all(
            float(np.linalg.norm(np.asarray(c.anchor) - np.asarray(prev.anchor)))
            > 2.0 * (c.diam + prev.diam)
            for prev in sel
        )
        if ok:
            sel.append(c)
    return sel


def _spread_cap(sel: list[_Candidate], m: int | None, seed: int) -> list[_Candidate]:
    k = len(sel)
    if m is None or m >= k:
        return sel
    stride = k / m
    phase = seed % max(1, int(stride))
    idx: list[int] = []
    for i in range(m):
        j = min(k - 1, phase + int(round(i * stride)))
        if j not in idx:
            idx.append(j)
    j = 0
    while len(idx) < m:
        if j not in idx:
            idx.append(j)
        j += 1
    return [sel[i] for i in sorted(idx)]


def _sup_ratio(psi: Potential, phi: Potential, maps: MapFamily) -> float:
    """Configured ratio sup phi/psi (both potentials negative)."""
    if psi.is_constant and phi.is_constant:
        return max(
            p / q
            for rp, rq in zip(phi.table, psi.table)
            for p, q in zip(rp, rq)
        )
    pts = [
        maps.ambient_lo + t * maps.widths for t in np.linspace(0.0, 1.0, 17)
    ]
    worst = 0.0
    for st in range(len(maps.maps)):
        for s in range(1, len(maps.maps[st]) + 1):
            for x in pts:
                worst = max(worst, phi.value(st, s, x) / psi.value(st, s, x))
    return worst


def _escort(
    path: OmegaPath,
    maps: MapFamily,
    resolver: TargetResolver,
    phi: Potential,
    pre_word: Word,
    gap: int,
    eps: float,
) -> tuple[Word, int, np.ndarray, float]:
    """Extend a selected candidate until its cylinder maps inside the target ball.

    Returns (leaf word, hit length, target point, ball radius).  The hit
    length is the prefix whose inverse map carries the leaf into the ball.
    """
    spec = resolver.spec

    def ball_stop(z: np.ndarray, r: float):
        # bounding-box corners inside the ball; exact for d=1 and unrotated
        # d=2, conservative (never early) for rotated images
        rr = r * (1.0 + 1e-9)
        zz = tuple(float(v) for v in z)
        if len(zz) == 1:
            z0 = zz[0]

            def stop(lo: tuple, hi: tuple) -> bool:
                return abs(lo[0] - z0) <= rr and abs(hi[0] - z0) <= rr

        else:

            def stop(lo: tuple, hi: tuple) -> bool:
                return all(
                    math.hypot(x - zz[0], y - zz[1]) <= rr
                    for x in (lo[0], hi[0])
                    for y in (lo[1], hi[1])
                )

        return stop

    def slack(length: int) -> float:
        return 0.0 if phi.is_constant else length * eps**3

    if spec.kind == "per-time":
        j = pre_word.end_offset + gap - 1
        if j >= path.horizon:
            raise ScheduleInfeasible(
                f"target offset {j} for leaf {pre_word} exceeds horizon"
            )
        z = resolver.target_at(j)
        reach = _reachable_row(path, pre_word.symbols[-1], pre_word.end_offset, gap)
        for s in range(1, path.alphabet(j) + 1):
            if not reach[s - 1]:
                continue
            bridge = _bridge(path, pre_word.end_offset - 1, pre_word.symbols[-1], s, gap)
            h = Word(pre_word.symbols + bridge, pre_word.start_offset)
            r = math.exp(_word_cocycle(path, maps, phi, h, z) - slack(len(h)))
            ext = resolver.descend(
                z, j, path.horizon - j + 1, allowed_first={s}, stop=ball_stop(z, r)
            )
            if ext is not None:
                leaf = Word(h.symbols + ext.symbols, pre_word.start_offset)
                return leaf, len(h), z, r
        raise ScheduleInfeasible(
            f"no admissible escort toward the offset-{j} target from {pre_word}"
        )

    # per-word and recurrence kinds: wait up to `gap` extra symbols until the
    # word's own target lands in its follower fiber, then shrink onto it.
    for k in range(gap + 1):
        if k == 0:
            exts = [Word((), pre_word.end_offset)]
        else:
            if pre_word.end_offset + k - 1 > path.horizon:
                break
            exts = iter_cylinders(path, pre_word.end_offset, k)
        for ext in exts:
            if len(ext) > 0:
                A = path.matrix(pre_word.end_offset - 1)
                if A[pre_word.symbols[-1] - 1, ext.symbols[0] - 1] != 1:
                    continue
                h = Word(pre_word.symbols + ext.symbols, pre_word.start_offset)
            else:
                h = pre_word
            z = resolver.target_for_word(h)
            followers = {
                int(i) + 1
                for i in np.nonzero(
                    path.matrix(h.end_offset - 1)[h.symbols[-1] - 1]
                )[0]
            }
            r = math.exp(_word_cocycle(path, maps, phi, h, z) - slack(len(h)))
            ext2 = resolver.descend(
                z,
                h.end_offset,
                path.horizon - h.end_offset + 1,
                allowed_first=followers,
                stop=ball_stop(z, r),
            )
            if ext2 is not None:
                leaf = Word(h.symbols + ext2.symbols, pre_word.start_offset)
                return leaf, len(h), z, r
    raise ScheduleInfeasible(
        f"no admissible escort for {spec.kind} targets below {pre_word}"
    )


def build_moran_tree(
    path: OmegaPath,
    maps: MapFamily,
    psi: Potential,
    phi: Potential,
    targets: TargetSpec,
    schedule: ScheduleSpec,
    seed: int = 0,
    cap: int = DEFAULT_CYLINDER_CAP,
) -> MoranNode:
    """Build the nested family and its measure; verify growth and hit bounds.

    Deterministic given (schedule, seed); the seed only rotates the phase of
    the even-spread thinning when max_children is active.
    """
    resolver = TargetResolver(path, maps, targets)
    alpha = _sup_ratio(psi, phi, maps)
    q = solve_pressure_root(
        path,
        maps,
        psi,
        phi,
        "target",
        n=min(schedule.root_level, path.horizon),
        cap=cap,
    ).root
    weight_pot = psi.plus(phi)
    log_unit = math.log(maps.ambient_diameter)

    root = MoranNode(
        word=Word((), 0),
        box=CylinderBox(
            word=Word((), 0),
            lo=maps.ambient_lo,
            hi=maps.ambient_hi,
            diameter=maps.ambient_diameter,
            anchor=maps.anchor_point,
        ),
        mass=1.0,
        generation=0,
    )
    leaves = [root]

    for g in range(1, schedule.generations + 1):
        p = schedule.p_min[g - 1]
        eps = schedule.epsilons[g - 1]
        growth = 1.0 + alpha + 2.0 * eps
        new_leaves: list[MoranNode] = []
        for leaf in leaves:
            offset = (
                0 if len(leaf.word) == 0 else leaf.word.end_offset + schedule.gap - 1
            )
            cands = _enumerate_candidates(
                path, maps, weight_pot, leaf, offset, p, schedule.gap, cap
            )
            if not cands:
                raise EmptySelection(f"no candidates below {leaf.word} at depth {p}")
            if not phi.is_constant:
                cands = [
                    c
                    for c in cands
                    if abs(_ratio_at(path, maps, psi, phi, Word(c.symbols, offset)) - alpha)
                    <= eps
                ] or cands
            kept = _spread_cap(_greedy_disjoint(maps, cands), schedule.cap_for(g), seed)
            if not kept:
                raise EmptySelection(f"selection empty below {leaf.word}")

            wmax = max(q * c.wexp for c in kept)
            raw = [math.exp(q * c.wexp - wmax) for c in kept]
            total = sum(raw)

            kids = []
            for c, w in zip(kept, raw):
                pre = Word(
                    leaf.word.symbols + c.bridge + c.symbols, leaf.word.start_offset
                )
                pre_box = cylinder_box(path, maps, pre)
                leaf_word, hit_len, z, r = _escort(
                    path, maps, resolver, phi, pre, schedule.gap, eps
                )
                box = cylinder_box(path, maps, leaf_word)
                lhs_growth = math.log(box.diameter) - log_unit
                rhs_growth = growth * (math.log(pre_box.diameter) - log_unit)
                if lhs_growth < rhs_growth - 1e-9:
                    raise ScheduleInfeasible(
                        f"escorted-diameter growth bound fails at {leaf_word}: "
                        f"log-rel diam {lhs_growth:.6g} < {growth:.4g} * "
                        f"{math.log(pre_box.diameter) - log_unit:.6g}"
                    )
                lhs, rhs = escort_hit_margin(path, maps, phi, leaf_word, hit_len, z)
                if lhs > rhs * (1.0 + 1e-9):
                    raise ScheduleInfeasible(
                        f"hit condition fails at {leaf_word}: {lhs:.3e} > {rhs:.3e}"
                    )
                kids.append(
                    MoranNode(
                        word=leaf_word,
                        box=box,
                        mass=leaf.mass * w / total,
                        generation=g,
                        pre_box=pre_box,
                        hit_len=hit_len,
                        target=np.asarray(z, dtype=float),
                    )
                )
            leaf.children = tuple(kids)
            new_leaves.extend(kids)
        leaves = new_leaves
    return root


def escort_hit_margin(
    path: OmegaPath,
    maps: MapFamily,
    phi: Potential,
    leaf_word: Word,
    hit_len: int,
    z: np.ndarray,
) -> tuple[float, float]:
    """Hit condition at the leaf anchor, evaluated on the contracting side.

    The anchor is g^leaf(x0) = g^h(g^ext(x0)) with h the hit prefix, so
    T^h(anchor) equals g^ext(x0) exactly; evaluating the escort part forward
    avoids the e^{|S psi|} noise amplification of a float inverse orbit.
    """
    h = Word(leaf_word.symbols[:hit_len], leaf_word.start_offset)
    ext = Word(leaf_word.symbols[hit_len:], leaf_word.start_offset + hit_len)
    y = compose_word(path, maps, ext).apply(maps.anchor_point)
    lhs = float(np.linalg.norm(y - np.asarray(z, dtype=float)))
    rhs = math.exp(_word_cocycle(path, maps, phi, h, y))
    return lhs, rhs


def _ratio_at(
    path: OmegaPath, maps: MapFamily, psi: Potential, phi: Potential, word: Word
) -> float:
    x0 = maps.anchor_point
    sp = _word_cocycle(path, maps, psi, word, x0)
    sf = _word_cocycle(path, maps, phi, word, x0)
    return sf / sp


# -- measure queries ----------------------------------------------------------


def _ball_box_relation(center: np.ndarray, radius: float, box: CylinderBox) -> str:
    gap = np.maximum(box.lo - center, 0.0) + np.maximum(center - box.hi, 0.0)
    if float(np.linalg.norm(gap)) > radius:
        return "disjoint"
    corners = (
        [box.lo, box.hi]
        if box.lo.shape[0] == 1
        else [
            box.lo,
            np.array([box.hi[0], box.lo[1]]),
            box.hi,
            np.array([box.lo[0], box.hi[1]]),
        ]
    )
    if all(float(np.linalg.norm(c - center)) <= radius for c in corners):
        return "inside"
    return "partial"


def mass_of_ball(root: MoranNode, center, radius: float) -> float:
    """Measure of the closed ball, exact on the tree's deepest generation."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=float)

    def rec(node: MoranNode) -> float:
        rel = _ball_box_relation(center, radius, node.box)
        if rel == "disjoint":
            return 0.0
        if rel == "inside" or not node.children:
            return node.mass
        return math.fsum(rec(c) for c in node.children)

    return rec(root)


def mass_exponent_probe(
    root: MoranNode,
    num_balls: int,
    radii,
    seed: int,
) -> tuple[float, list[ProbeRow]]:
    """Empirical mass exponents log mass / log radius at seeded support points."""
    radii = [float(r) for r in radii]
    leaves = root.leaves()
    min_leaf = min(l.box.diameter for l in leaves)
    if any(not min_leaf < r < root.box.diameter for r in radii):
        raise ValueError(
            f"radii must lie strictly between the smallest leaf diameter "
            f"({min_leaf:.3e}) and the root diameter ({root.box.diameter:.3e})"
        )
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(leaves), size=min(num_balls, len(leaves)), replace=False)
    if num_balls > len(leaves):
        extra = rng.choice(len(leaves), size=num_balls - len(leaves), replace=True)
        idx = np.concatenate([idx, extra])
    rows: list[ProbeRow] = []
    for i in idx:
        center = leaves[int(i)].box.anchor
        for r in radii:
            m = mass_of_ball(root, center, r)
            exponent = 0.0 if m >= 1.0 else math.log(m) / math.log(r)
            rows.append(
                ProbeRow(
                    center=tuple(float(c) for c in center),
                    radius=r,
                    mass=m,
                    exponent=exponent,
                )
            )
    return min(r.exponent for r in rows), rows
