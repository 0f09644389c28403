"""Box-counting dimension estimation and the pressure-root comparison report.

Grid occupancy is anchored at the ambient box corner with half-open cells
and a small index snap, so exactly grid-aligned inputs count their interiors
rather than double-counting shared boundaries.  The slope comes from least
squares on (log 1/scale, log count) over a window that by default discards
the coarsest and finest scale.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .environment import OmegaPath
from .errors import DegenerateFit, EmptyInput, ExplosionGuard
from .geometry import MapFamily, attractor_boxes
from .potentials import Potential
from .subshift import DEFAULT_CYLINDER_CAP
from .targets import TargetSpec, build_target_cover
from .thermo import RootResult, solve_pressure_root

_SNAP = 1e-9
_CELL_GUARD = 20_000_000


@dataclass(frozen=True)
class BoxCountResult:
    scales: tuple[float, ...]
    counts: tuple[int, ...]
    slope: float
    slope_stderr: float
    window: tuple[int, int]


def _index_range(lo: float, hi: float, base: float, scale: float) -> range:
    i0 = math.floor((lo - base) / scale + _SNAP)
    i1 = math.ceil((hi - base) / scale - _SNAP) - 1
    return range(i0, max(i0, i1) + 1)


def _occupied(cells, points, base: np.ndarray, scale: float, threads: int) -> int:
    def boxes_chunk(chunk) -> set:
        seen = set()
        for lo, hi in chunk:
            if len(base) == 1:
                for i in _index_range(lo[0], hi[0], base[0], scale):
                    seen.add(i)
            else:
                xs = _index_range(lo[0], hi[0], base[0], scale)
                ys = _index_range(lo[1], hi[1], base[1], scale)
                if len(xs) * len(ys) > _CELL_GUARD:
                    raise ExplosionGuard(
                        f"a single box covers {len(xs) * len(ys)} grid cells "
                        f"at scale {scale}"
                    )
                for i in xs:
                    for j in ys:
                        seen.add((i, j))
            if len(seen) > _CELL_GUARD:
                raise ExplosionGuard(f"occupancy exceeds {_CELL_GUARD} at scale {scale}")
        return seen

    if points is not None:
        idx = np.floor((points - base) / scale + _SNAP).astype(np.int64)
        return len({tuple(row) for row in idx})
    chunks = [cells]
    if threads > 1 and len(cells) > 4 * threads:
        size = (len(cells) + threads - 1) // threads
        chunks = [cells[i : i + size] for i in range(0, len(cells), size)]
    if len(chunks) == 1:
        return len(boxes_chunk(chunks[0]))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        sets = list(pool.map(boxes_chunk, chunks))
    return len(set().union(*sets))


def box_count(
    cells_or_points,
    scales,
    ambient_lo,
    ambient_hi,
    window: tuple[int, int] | None = None,
    threads: int = 1,
) -> BoxCountResult:
    """Grid-occupancy counts per scale plus the fitted log-log slope.

    Input is either an (N, d) array of points or an iterable of objects with
    lo/hi bounds (cylinder boxes, target cells).  Scales must be strictly
    decreasing and smaller than the ambient diameter.
    """
    base = np.asarray(ambient_lo, dtype=float)
    diam = float(np.linalg.norm(np.asarray(ambient_hi, dtype=float) - base))
    scales = [float(s) for s in scales]
    if any(b >= a for a, b in zip(scales, scales[1:])) or not scales:
        raise ValueError("scales must be strictly decreasing")
    if any(not 0 < s < diam for s in scales):
        raise ValueError("scales must lie in (0, ambient diameter)")

    points = None
    cells = None
    if isinstance(cells_or_points, np.ndarray):
        points = np.atleast_2d(np.asarray(cells_or_points, dtype=float))
        if points.size == 0:
            raise EmptyInput("no points to count")
    else:
        cells = [
            (np.asarray(c.lo, dtype=float), np.asarray(c.hi, dtype=float))
            for c in cells_or_points
        ]
        if not cells:
            raise EmptyInput("no cells to count")

    counts = [_occupied(cells, points, base, s, threads) for s in scales]

    if window is None:
        window = (1, len(scales) - 2) if len(scales) >= 5 else (0, len(scales) - 1)
    i0, i1 = window
    if i1 - i0 + 1 < 3:
        raise DegenerateFit(f"fit window {window} has fewer than 3 scales")
    x = np.log([1.0 / s for s in scales[i0 : i1 + 1]])
    y = np.log(counts[i0 : i1 + 1])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    dof = len(x) - 2
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else 0.0
    return BoxCountResult(
        scales=tuple(scales),
        counts=tuple(int(c) for c in counts),
        slope=float(slope),
        slope_stderr=stderr,
        window=(i0, i1),
    )


@dataclass(frozen=True)
class DimensionReport:
    """Pressure roots vs box-count slopes for one model."""

    t0: RootResult
    q0: RootResult
    attractor: BoxCountResult
    cover: BoxCountResult
    attractor_gap: float
    cover_gap: float

    def to_record(self) -> dict:
        return {
            "t0": self.t0.root,
            "t0_residual": self.t0.residual,
            "q0": self.q0.root,
            "q0_residual": self.q0.residual,
            "root_level": self.t0.n_used,
            "attractor_slope": self.attractor.slope,
            "attractor_stderr": self.attractor.slope_stderr,
            "attractor_gap": self.attractor_gap,
            "cover_slope": self.cover.slope,
            "cover_stderr": self.cover.slope_stderr,
            "cover_gap": self.cover_gap,
        }


def dimension_report(
    path: OmegaPath,
    maps: MapFamily,
    psi: Potential,
    phi: Potential,
    targets: TargetSpec,
    depth: int,
    scales,
    root_n: int = 8,
    bracket: tuple[float, float] | None = None,
    cap: int = DEFAULT_CYLINDER_CAP,
    threads: int = 1,
) -> DimensionReport:
    """Solve both pressure roots and box-count the truncated attractor and cover."""
    t0 = solve_pressure_root(path, maps, psi, None, "bowen-ruelle", bracket, root_n, cap=cap)
    q0 = solve_pressure_root(path, maps, psi, phi, "target", bracket, root_n, cap=cap)
    attractor = box_count(
        attractor_boxes(path, maps, depth, cap=cap),
        scales,
        maps.ambient_lo,
        maps.ambient_hi,
        threads=threads,
    )
    cover_cells = build_target_cover(path, maps, phi, targets, (depth, depth), cap=cap)
    cover = box_count(
        cover_cells, scales, maps.ambient_lo, maps.ambient_hi, threads=threads
    )
    return DimensionReport(
        t0=t0,
        q0=q0,
        attractor=attractor,
        cover=cover,
        attractor_gap=attractor.slope - t0.root,
        cover_gap=cover.slope - q0.root,
    )
