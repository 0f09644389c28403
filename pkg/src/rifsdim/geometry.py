"""Geometric layer: contractions indexed by (state, symbol) and their algebra.

Each environment state carries one injective contraction of the ambient box
per alphabet symbol.  Maps are similarities (ratio, offset, optional rotation
in the plane) with an optional smooth log-derivative perturbation in one
dimension.  The perturbation amplitude ``delta`` is calibrated so that the
oscillation of the log-derivative over the ambient box is exactly delta
(amplitude tanh(delta/2) on the sine term), which keeps distortion budgets
measurable against a clean bound.

Composition along an admissible word gives the cylinder map; its image box,
diameter, and anchor are exact for pure similarities and for the monotone
one-dimensional perturbed mode (endpoints map to endpoints).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environment import EnvironmentModel, OmegaPath, stationary_frequencies
from .errors import (
    ConfigError,
    NotAdmissible,
    NotContracting,
    OverlappingImages,
    PointOutsideCylinder,
)
from .potentials import Potential
from .subshift import Word, count_cylinders, is_admissible, iter_cylinders

_TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ContractionMap:
    """One similarity (plus optional 1-d perturbation) acting on the ambient box."""

    ratio: float
    offset: tuple[float, ...]
    rotation: float = 0.0
    perturbation: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.ratio <= 1.0:
            raise ConfigError(f"map ratio must be in (0, 1], got {self.ratio}")
        if self.perturbation < 0:
            raise ConfigError("perturbation magnitude must be >= 0")

    @property
    def amp(self) -> float:
        """Sine amplitude giving log-derivative oscillation exactly delta."""
        return math.tanh(self.perturbation / 2.0)


@dataclass(frozen=True)
class MapFamily:
    """Ambient box plus one ContractionMap per (state, symbol)."""

    ambient_lo: np.ndarray
    ambient_hi: np.ndarray
    maps: tuple[tuple[ContractionMap, ...], ...]

    def __post_init__(self) -> None:
        lo = np.asarray(self.ambient_lo, dtype=float)
        hi = np.asarray(self.ambient_hi, dtype=float)
        object.__setattr__(self, "ambient_lo", lo)
        object.__setattr__(self, "ambient_hi", hi)
        lo.setflags(write=False)
        hi.setflags(write=False)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ConfigError("ambient box bounds must be 1-d arrays of equal shape")
        if self.dim not in (1, 2):
            raise ConfigError(f"ambient dimension must be 1 or 2, got {self.dim}")
        if np.any(hi <= lo):
            raise ConfigError("ambient box must have positive extent")
        for state_maps in self.maps:
            for m in state_maps:
                if len(m.offset) != self.dim:
                    raise ConfigError("map offset dimension mismatch with ambient box")
                if m.perturbation > 0 and self.dim != 1:
                    raise ConfigError("log-derivative perturbation only supported in d=1")
                if m.rotation != 0.0 and self.dim != 2:
                    raise ConfigError("rotation only supported in d=2")

    @property
    def dim(self) -> int:
        return int(self.ambient_lo.shape[0])

    @property
    def widths(self) -> np.ndarray:
        return self.ambient_hi - self.ambient_lo

    @property
    def ambient_diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    @property
    def anchor_point(self) -> np.ndarray:
        return (self.ambient_lo + self.ambient_hi) / 2.0

    @property
    def is_similarity(self) -> bool:
        return all(m.perturbation == 0.0 for sm in self.maps for m in sm)

    def map_for(self, state_id: int, symbol: int) -> ContractionMap:
        try:
            return self.maps[state_id][symbol - 1]
        except IndexError:
            raise ConfigError(
                f"no map for state {state_id}, symbol {symbol}"
            ) from None

    # -- single-step application --------------------------------------------

    def apply(self, state_id: int, symbol: int, x: np.ndarray) -> np.ndarray:
        m = self.map_for(state_id, symbol)
        lo = self.ambient_lo
        if self.dim == 1:
            t = float(x[0] - lo[0])
            y = m.offset[0] + m.ratio * t
            if m.perturbation > 0:
                w = float(self.widths[0])
                y += m.ratio * w * (m.amp / _TWO_PI) * (1.0 - math.cos(_TWO_PI * t / w))
            return np.array([y])
        rot = _rot(m.rotation)
        return np.asarray(m.offset) + m.ratio * rot @ (x - lo)

    def invert(self, state_id: int, symbol: int, y: np.ndarray) -> np.ndarray:
        m = self.map_for(state_id, symbol)
        lo = self.ambient_lo
        if self.dim == 1:
            if m.perturbation == 0:
                return np.array([lo[0] + (y[0] - m.offset[0]) / m.ratio])
            return np.array([_invert_monotone(self, m, float(y[0]))])
        rot = _rot(m.rotation)
        return lo + rot.T @ (np.asarray(y) - np.asarray(m.offset)) / m.ratio

    def log_derivative(self, state_id: int, symbol: int, x: np.ndarray) -> float:
        """Local log contraction factor at a domain point."""
        m = self.map_for(state_id, symbol)
        base = math.log(m.ratio)
        if m.perturbation == 0:
            return base
        w = float(self.widths[0])
        t = float(x[0] - self.ambient_lo[0])
        return base + math.log1p(m.amp * math.sin(_TWO_PI * t / w))


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _invert_monotone(fam: MapFamily, m: ContractionMap, y: float) -> float:
    """Invert the monotone perturbed 1-d map by safeguarded Newton."""
    lo, hi = float(fam.ambient_lo[0]), float(fam.ambient_hi[0])
    w = hi - lo

    def g(t: float) -> float:
        return (
            m.offset[0]
            + m.ratio * (t - lo)
            + m.ratio * w * (m.amp / _TWO_PI) * (1.0 - math.cos(_TWO_PI * (t - lo) / w))
        )

    a, b = lo, hi
    x = lo + (y - m.offset[0]) / m.ratio  # similarity guess
    x = min(max(x, a), b)
    for _ in range(200):
        fx = g(x) - y
        if fx > 0:
            b = x
        else:
            a = x
        deriv = m.ratio * (1.0 + m.amp * math.sin(_TWO_PI * (x - lo) / w))
        step = fx / deriv
        x_new = x - step
        if not a <= x_new <= b:
            x_new = 0.5 * (a + b)
        if abs(x_new - x) <= 1e-16 * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


class WordMap:
    """The composed cylinder map along a word.

    Pure-similarity compositions collapse to a single affine transform, so
    extension and evaluation are O(1); in one dimension the transform is held
    as plain floats, which keeps deep enumerations cheap.  Perturbed
    compositions keep the step list and evaluate by folding, which stays
    exact because every factor is coordinate-monotone.
    """

    __slots__ = ("family", "steps", "_affine")

    def __init__(self, family: MapFamily, steps=(), affine=None):
        self.family = family
        self.steps = steps
        if affine is None and not steps:
            if family.dim == 1:
                affine = (float(family.ambient_lo[0]), 1.0, None)
            else:
                affine = (family.ambient_lo.copy(), 1.0, np.eye(2))
        self._affine = affine

    def extend(self, state_id: int, symbol: int) -> "WordMap":
        m = self.family.map_for(state_id, symbol)
        steps = self.steps + ((state_id, symbol),)
        if self._affine is None or m.perturbation > 0:
            return WordMap(self.family, steps, affine=None)
        c, rho, P = self._affine
        if P is None:
            c_new = c + rho * (m.offset[0] - float(self.family.ambient_lo[0]))
            return WordMap(self.family, steps, (c_new, rho * m.ratio, None))
        b = np.asarray(m.offset, dtype=float)
        R = _rot(m.rotation)
        c_new = c + rho * P @ (b - self.family.ambient_lo)
        return WordMap(self.family, steps, (c_new, rho * m.ratio, P @ R))

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self._affine is not None:
            c, rho, P = self._affine
            if P is None:
                return np.array([c + rho * (float(x[0]) - float(self.family.ambient_lo[0]))])
            return c + rho * (P @ (x - self.family.ambient_lo))
        y = np.asarray(x, dtype=float)
        for state_id, symbol in reversed(self.steps):
            y = self.family.apply(state_id, symbol, y)
        return y

    def scale(self) -> float:
        """Similarity ratio of the composition (exact in affine mode)."""
        if self._affine is not None:
            return self._affine[1]
        rho = 1.0
        for state_id, symbol in self.steps:
            rho *= self.family.map_for(state_id, symbol).ratio
        return rho

    def sup_contraction(self) -> float:
        out = 1.0
        for state_id, symbol in self.steps:
            m = self.family.map_for(state_id, symbol)
            out *= m.ratio * (1.0 + m.amp)
        return out

    def corners(self) -> np.ndarray:
        """Images of the ambient-box corners (exact vertices in affine mode)."""
        lo, hi = self.family.ambient_lo, self.family.ambient_hi
        if self.family.dim == 1:
            if self._affine is not None:
                c, rho, _ = self._affine
                return np.array([[c], [c + rho * (float(hi[0]) - float(lo[0]))]])
            pts = [lo, hi]
        else:
            pts = [lo, np.array([hi[0], lo[1]]), hi, np.array([lo[0], hi[1]])]
        return np.array([self.apply(p) for p in pts])

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        if self.family.dim == 1 and self._affine is not None:
            c, rho, _ = self._affine
            w = float(self.family.ambient_hi[0]) - float(self.family.ambient_lo[0])
            return np.array([c]), np.array([c + rho * w])
        pts = self.corners()
        return pts.min(axis=0), pts.max(axis=0)

    def diameter(self) -> float:
        if self.family.dim == 1 and self._affine is None:
            lo, hi = self.box()
            return float(hi[0] - lo[0])
        return self.scale() * self.family.ambient_diameter


def compose_word(path: OmegaPath, maps: MapFamily, word: Word) -> WordMap:
    wm = WordMap(maps)
    for k, s in enumerate(word.symbols):
        wm = wm.extend(path.state(word.start_offset + k), s)
    return wm


@dataclass(frozen=True)
class CylinderBox:
    """Geometric image of an admissible word: bounding box, diameter, anchor."""

    word: Word
    lo: np.ndarray
    hi: np.ndarray
    diameter: float
    anchor: np.ndarray

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))


def cylinder_box(path: OmegaPath, maps: MapFamily, word: Word) -> CylinderBox:
    """Image of the ambient box under the word's composed map."""
    if not is_admissible(path, word):
        raise NotAdmissible(f"word {word} at offset {word.start_offset}")
    wm = compose_word(path, maps, word)
    lo, hi = wm.box()
    return CylinderBox(
        word=word,
        lo=lo,
        hi=hi,
        diameter=wm.diameter(),
        anchor=wm.apply(maps.anchor_point),
    )


def project_point(
    path: OmegaPath,
    maps: MapFamily,
    symbols,
    depth: int,
    offset: int = 0,
) -> np.ndarray:
    """Depth-truncated natural projection of an infinite-word prefix."""
    word = Word(tuple(symbols)[:depth], offset)
    if not is_admissible(path, word):
        raise NotAdmissible(f"prefix {word} at offset {offset}")
    return compose_word(path, maps, word).apply(maps.anchor_point)


def inverse_orbit(
    path: OmegaPath, maps: MapFamily, word: Word, x: np.ndarray
) -> list[np.ndarray]:
    """Points x, T^{v0}x, T^{v0 v1}x, ... along the word, with containment checks."""
    tol = 1e-9 * float(np.max(maps.widths))
    y = np.asarray(x, dtype=float)
    out = [y]
    for k, s in enumerate(word.symbols):
        state = path.state(word.start_offset + k)
        img = WordMap(maps).extend(state, s)
        blo, bhi = img.box()
        if not (np.all(y >= blo - tol) and np.all(y <= bhi + tol)):
            raise PointOutsideCylinder(
                f"point {y} escapes symbol {s} at step {k} of word {word}"
            )
        y = maps.invert(state, s, y)
        out.append(y)
    return out


def birkhoff_sum(
    path: OmegaPath,
    maps: MapFamily,
    potential: Potential,
    word: Word,
    x: np.ndarray,
) -> float:
    """Cocycle sum of the potential along the inverse orbit of x under the word."""
    orbit = inverse_orbit(path, maps, word, x)
    total = 0.0
    for k, s in enumerate(word.symbols):
        total += potential.value(path.state(word.start_offset + k), s, orbit[k])
    return total


def fixed_point(path: OmegaPath, maps: MapFamily, word: Word) -> np.ndarray:
    """The unique fixed point of the composed word map.

    Solved in closed form for pure similarities, by iteration otherwise;
    certified to |g(x) - x| <= 1e-12 either way.
    """
    if len(word) == 0:
        raise ValueError("fixed point of the empty word is undefined")
    if not is_admissible(path, word):
        raise NotAdmissible(f"word {word} at offset {word.start_offset}")
    wm = compose_word(path, maps, word)
    if wm.sup_contraction() >= 1.0:
        raise NotContracting(
            f"composite map of {word} has contraction bound {wm.sup_contraction()}"
        )
    if wm._affine is not None:
        c, rho, P = wm._affine
        lo = maps.ambient_lo
        if P is None:
            x = np.array([(c - rho * float(lo[0])) / (1.0 - rho)])
        else:
            x = np.linalg.solve(np.eye(2) - rho * P, c - rho * P @ lo)
    else:
        x = maps.anchor_point
        for _ in range(100_000):
            x_new = wm.apply(x)
            if float(np.max(np.abs(x_new - x))) <= 1e-15:
                x = x_new
                break
            x = x_new
    residual = float(np.linalg.norm(wm.apply(x) - x))
    if residual > 1e-12:
        raise NotContracting(f"fixed-point iteration stalled at residual {residual}")
    return x


def log_contraction_potential(maps: MapFamily) -> Potential:
    """The potential induced by the maps' local contraction factors."""
    if maps.is_similarity:
        table = tuple(
            tuple(math.log(m.ratio) for m in state_maps) for state_maps in maps.maps
        )
        return Potential(table=table, label="psi")
    return Potential(
        table=None,
        func=lambda st, s, x: maps.log_derivative(st, s, x),
        label="psi",
    )


@dataclass(frozen=True)
class DistortionBudget:
    """Per-depth bound on |log(diam/|U|) - Birkhoff sum at the anchor| / n.

    Diameters are normalized by the ambient diameter so pure similarities
    measure exactly zero.  Values are nonincreasing in n (running max from
    the tail).
    """

    eps: tuple[float, ...]

    def at(self, n: int) -> float:
        if n < 1:
            raise ValueError("depth must be >= 1")
        return self.eps[min(n, len(self.eps)) - 1]


def calibrate_distortion(
    path: OmegaPath,
    maps: MapFamily,
    max_depth: int,
    samples_per_depth: int = 64,
    seed: int = 0,
) -> DistortionBudget:
    """Measure the distortion budget on sampled cylinders up to max_depth."""
    psi = log_contraction_potential(maps)
    log_unit = math.log(maps.ambient_diameter)
    rng = np.random.default_rng(seed)
    raw = []
    for n in range(1, max_depth + 1):
        if count_cylinders(path, 0, n) <= samples_per_depth:
            words = list(iter_cylinders(path, 0, n))
        else:
            words = [_random_word(path, n, rng) for _ in range(samples_per_depth)]
        worst = 0.0
        for w in words:
            wm = compose_word(path, maps, w)
            gap = abs(
                math.log(wm.diameter())
                - log_unit
                - birkhoff_sum(path, maps, psi, w, wm.apply(maps.anchor_point))
            )
            worst = max(worst, gap / n)
        raw.append(worst)
    # enforce monotonicity: running max from the tail
    for i in range(len(raw) - 2, -1, -1):
        raw[i] = max(raw[i], raw[i + 1])
    return DistortionBudget(eps=tuple(raw))


def _random_word(path: OmegaPath, n: int, rng: np.random.Generator) -> Word:
    syms = [int(rng.integers(1, path.alphabet(0) + 1))]
    for k in range(1, n):
        A = path.matrix(k - 1)
        allowed = np.nonzero(A[syms[-1] - 1])[0] + 1
        syms.append(int(rng.choice(allowed)))
    return Word(tuple(syms), 0)


# -- load-time validation ----------------------------------------------------


def validate_maps(maps: MapFamily, model: EnvironmentModel) -> None:
    """Check coverage, containment, interior disjointness, average contraction."""
    if len(maps.maps) != model.n_states:
        raise ConfigError(
            f"map family covers {len(maps.maps)} states, model has {model.n_states}"
        )
    tol = 1e-12 * maps.ambient_diameter
    for state_id, st in enumerate(model.states):
        if len(maps.maps[state_id]) != st.l:
            raise ConfigError(
                f"state {state_id} has {st.l} symbols but "
                f"{len(maps.maps[state_id])} maps"
            )
        polys = []
        for sym in range(1, st.l + 1):
            wm = WordMap(maps).extend(state_id, sym)
            blo, bhi = wm.box()
            if np.any(blo < maps.ambient_lo - tol) or np.any(bhi > maps.ambient_hi + tol):
                raise ConfigError(
                    f"image of symbol {sym} at state {state_id} leaves the ambient box"
                )
            polys.append(wm.corners())
        for i in range(len(polys)):
            for j in range(i + 1, len(polys)):
                if _interiors_overlap(maps.dim, polys[i], polys[j], tol):
                    raise OverlappingImages(
                        f"state {state_id}: images of symbols {i + 1} and {j + 1} "
                        "share interior points"
                    )

    freqs = stationary_frequencies(model)
    avg = 0.0
    for state_id, st in enumerate(model.states):
        worst = max(
            math.log(m.ratio) + math.log1p(m.amp) for m in maps.maps[state_id]
        )
        avg += freqs[state_id] * worst
    if avg >= 0.0:
        raise ConfigError(
            f"maps are not contracting on average (mean sup log-derivative {avg:.3g})"
        )


def _interiors_overlap(dim: int, pa: np.ndarray, pb: np.ndarray, tol: float) -> bool:
    if dim == 1:
        lo = max(pa.min(), pb.min())
        hi = min(pa.max(), pb.max())
        return hi - lo > tol
    # separating-axis test on the edge normals of both convex quads
    for poly in (pa, pb):
        for k in range(len(poly)):
            edge = poly[(k + 1) % len(poly)] - poly[k]
            axis = np.array([-edge[1], edge[0]])
            norm = np.linalg.norm(axis)
            if norm == 0:
                continue
            axis = axis / norm
            a_proj = pa @ axis
            b_proj = pb @ axis
            if a_proj.max() <= b_proj.min() + tol or b_proj.max() <= a_proj.min() + tol:
                return False
    return True


def attractor_boxes(
    path: OmegaPath, maps: MapFamily, depth: int, cap: int = 10_000_000
) -> list[CylinderBox]:
    """Cylinder boxes of every admissible word at the given depth."""
    return [cylinder_box(path, maps, w) for w in iter_cylinders(path, 0, depth, cap=cap)]
