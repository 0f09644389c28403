"""Thermodynamic formalism: partition functions, pressure, and its roots.

Partition sums run in the log domain.  Constant-per-symbol potentials use a
dynamic program over (position, last symbol); everything else enumerates
cylinders and evaluates the cocycle sum at per-cylinder representative
points.  Pressure is the large-n limit of (1/n) log Z_n, estimated here from
a finite schedule with 1/n Richardson extrapolation and an honest
uncertainty (the gap between the last two extrapolants).

Roots of the pressure are found by bisection at a fixed level n, which is
valid because c :-> (1/n) log Z_n(c * base) is strictly decreasing whenever
the base potential is negative per step.

The normalized cylinder weights returned by `gibbs_weights` are the finite
level surrogate of the fiberwise eigen-measure; the reported lambda
surrogate Z_{n+1}/Z_n mixes fibers, unlike the fiberwise eigenvalue it
stands in for (exact only in the constant fixed-environment case).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environment import OmegaPath
from .errors import NoSignChange, NotContractingPotential, OutOfHorizon
from .geometry import MapFamily
from .potentials import Potential, average_sup
from .subshift import DEFAULT_CYLINDER_CAP, Word, iter_cylinders

ROOT_WIDTH = 1e-8


@dataclass(frozen=True)
class PressureCurve:
    """Finite-level pressure samples plus extrapolation."""

    samples: tuple[tuple[int, float], ...]
    extrapolated: float
    uncertainty: float


@dataclass(frozen=True)
class RootResult:
    """A solved pressure root with its bisection bracket and residual."""

    root: float
    bracket: tuple[float, float]
    residual: float
    n_used: int


def _logsumexp(values) -> float:
    arr = np.asarray(values, dtype=float)
    m = np.max(arr)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(arr - m))))


def _dp_log_partition(
    path: OmegaPath, potential: Potential, offset: int, n: int
) -> float:
    state = path.state(offset)
    L = np.array(potential.table[state], dtype=float)
    for k in range(1, n):
        A = path.matrix(offset + k - 1)
        state = path.state(offset + k)
        ups = np.array(potential.table[state], dtype=float)
        logA = np.where(A == 1, 0.0, -np.inf)
        L = np.logaddexp.reduce(L[:, None] + logA, axis=0) + ups
    return _logsumexp(L)


def _anchor_points(maps: MapFamily, anchor_rule: str, sample_points: int):
    if anchor_rule == "anchor":
        return [maps.anchor_point]
    if anchor_rule != "sup-sample":
        raise ValueError(f"unknown anchor rule {anchor_rule!r}")
    lo, hi = maps.ambient_lo, maps.ambient_hi
    k = max(1, sample_points)
    return [lo + (hi - lo) * ((i + 0.5) / k) for i in range(k)]


def _word_cocycle(
    path: OmegaPath,
    maps: MapFamily,
    potential: Potential,
    word: Word,
    base_point: np.ndarray,
) -> float:
    """Cocycle sum at the image of base_point, folded from the word's tail."""
    n = len(word)
    pts = [None] * (n + 1)
    pts[n] = base_point
    for i in range(n - 1, -1, -1):
        pts[i] = maps.apply(path.state(word.start_offset + i), word.symbols[i], pts[i + 1])
    total = 0.0
    for i in range(n):
        total += potential.value(path.state(word.start_offset + i), word.symbols[i], pts[i])
    return total


def partition_function_log(
    path: OmegaPath,
    maps: MapFamily,
    potential: Potential,
    offset: int,
    n: int,
    anchor_rule: str = "anchor",
    sample_points: int = 5,
    cap: int = DEFAULT_CYLINDER_CAP,
) -> float:
    """log of the level-n partition sum of the potential at `offset`.

    Constant potentials use the log-sum-exp dynamic program (no enumeration);
    otherwise admissible words are enumerated and the cocycle sum is taken at
    the cylinder anchor or maximized over `sample_points` spread points.
    """
    if n < 1:
        raise ValueError("partition level must be >= 1")
    if offset + n - 1 > path.horizon:
        raise OutOfHorizon(f"level {n} at offset {offset} exceeds horizon")
    if potential.is_constant:
        return _dp_log_partition(path, potential, offset, n)
    base_points = _anchor_points(maps, anchor_rule, sample_points)
    terms = []
    for word in iter_cylinders(path, offset, n, cap=cap):
        vals = [_word_cocycle(path, maps, potential, word, p) for p in base_points]
        terms.append(max(vals))
    return _logsumexp(terms)


def pressure_estimate(
    path: OmegaPath,
    maps: MapFamily,
    potential: Potential,
    n_schedule,
    anchor_rule: str = "anchor",
    cap: int = DEFAULT_CYLINDER_CAP,
) -> PressureCurve:
    """Sample (1/n) log Z_n over the schedule and extrapolate the limit."""
    schedule = list(n_schedule)
    if len(schedule) < 2 or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("n_schedule must be strictly increasing with >= 2 entries")
    samples = []
    for n in schedule:
        logz = partition_function_log(
            path, maps, potential, 0, n, anchor_rule=anchor_rule, cap=cap
        )
        samples.append((n, logz / n))

    def richardson(i: int, j: int) -> float:
        (na, ya), (nb, yb) = samples[i], samples[j]
        return (nb * yb - na * ya) / (nb - na)

    extrapolated = richardson(-2, -1)
    if len(samples) >= 3:
        uncertainty = abs(extrapolated - richardson(-3, -2))
    else:
        uncertainty = abs(samples[-1][1] - samples[-2][1])
    return PressureCurve(
        samples=tuple(samples), extrapolated=extrapolated, uncertainty=uncertainty
    )


def solve_pressure_root(
    path: OmegaPath,
    maps: MapFamily,
    psi: Potential,
    phi: Potential | None,
    mode: str,
    bracket: tuple[float, float] | None = None,
    n: int = 8,
    anchor_rule: str = "anchor",
    cap: int = DEFAULT_CYLINDER_CAP,
) -> RootResult:
    """Bisection root of c :-> (1/n) log Z_n(c * base).

    mode "bowen-ruelle" uses base psi (attractor dimension); mode "target"
    uses base psi + phi (shrinking-target dimension).
    """
    if mode == "bowen-ruelle":
        base = psi
    elif mode == "target":
        if phi is None:
            raise ValueError("target mode needs phi")
        base = psi.plus(phi)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    if average_sup(base, path.model, maps) >= 0.0:
        raise NotContractingPotential(
            f"base potential for mode {mode!r} is not negative on average"
        )

    lo, hi = bracket if bracket is not None else (0.0, maps.dim + 1.0)

    def f(c: float) -> float:
        return (
            partition_function_log(
                path, maps, base.scale(c), 0, n, anchor_rule=anchor_rule, cap=cap
            )
            / n
        )

    flo, fhi = f(lo), f(hi)
    if not (flo > 0.0 > fhi):
        raise NoSignChange(
            f"pressure has no sign change on [{lo}, {hi}] "
            f"(values {flo:.6g}, {fhi:.6g})"
        )
    while hi - lo > ROOT_WIDTH:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    return RootResult(root=root, bracket=(lo, hi), residual=abs(f(root)), n_used=n)


def gibbs_weights(
    path: OmegaPath,
    maps: MapFamily,
    potential: Potential,
    offset: int,
    n: int,
    anchor_rule: str = "anchor",
    sample_points: int = 5,
    cap: int = DEFAULT_CYLINDER_CAP,
) -> tuple[dict[Word, float], float]:
    """Normalized level-n cylinder weights plus the Z_{n+1}/Z_n surrogate."""
    base_points = _anchor_points(maps, anchor_rule, sample_points)
    words = []
    scores = []
    for word in iter_cylinders(path, offset, n, cap=cap):
        vals = [_word_cocycle(path, maps, potential, word, p) for p in base_points]
        words.append(word)
        scores.append(max(vals))
    logz = _logsumexp(scores)
    weights = {w: math.exp(s - logz) for w, s in zip(words, scores)}
    logz_next = partition_function_log(
        path, maps, potential, offset, n + 1,
        anchor_rule=anchor_rule, sample_points=sample_points, cap=cap,
    )
    lam = math.exp(logz_next - logz)
    return weights, lam


@dataclass(frozen=True)
class GibbsDiagnostic:
    """Per-depth deviation of level weights from the ideal Gibbs form."""

    deviations: tuple[tuple[int, float], ...]
    nonincreasing: bool
    pressure: float


def gibbs_ratio_diagnostic(
    path: OmegaPath,
    maps: MapFamily,
    potential: Potential,
    depths,
    pressure_schedule=None,
    anchor_rule: str = "anchor",
    cap: int = DEFAULT_CYLINDER_CAP,
    slack: float = 0.01,
) -> GibbsDiagnostic:
    """Max per-cylinder Gibbs deviation (1/n)|log w - (S_n - n P)| per depth.

    With anchor weights the deviation reduces to |P_hat - (1/n) log Z_n|,
    the honest gap between the level-n free energy and the extrapolated
    pressure.
    """
    depths = sorted(depths)
    if pressure_schedule is None:
        top = min(path.horizon, max(depths) + 12)
        pressure_schedule = list(range(4, top + 1, 2))
    curve = pressure_estimate(
        path, maps, potential, pressure_schedule, anchor_rule=anchor_rule, cap=cap
    )
    p_hat = curve.extrapolated
    devs = []
    for n in depths:
        logz = partition_function_log(
            path, maps, potential, 0, n, anchor_rule=anchor_rule, cap=cap
        )
        devs.append((n, abs(p_hat - logz / n)))
    ok = all(b <= a + slack for (_, a), (_, b) in zip(devs, devs[1:]))
    return GibbsDiagnostic(deviations=tuple(devs), nonincreasing=ok, pressure=p_hat)
