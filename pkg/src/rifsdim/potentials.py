"""Evaluable potentials on (state, symbol, point) triples.

A Potential is either a constant-per-(state, symbol) table, which admits
exact dynamic programming, or an arbitrary callable.  Linear combinations
stay in table form whenever both operands do, so the fast paths survive
scaling and addition.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Potential:
    """One evaluation rule per (state, symbol, point)."""

    table: tuple[tuple[float, ...], ...] | None = None
    func: Callable[[int, int, np.ndarray], float] | None = None
    label: str = ""

    def __post_init__(self) -> None:
        if (self.table is None) == (self.func is None):
            raise ValueError("exactly one of table/func must be given")

    @property
    def is_constant(self) -> bool:
        return self.table is not None

    def value(self, state_id: int, symbol: int, point: np.ndarray) -> float:
        if self.table is not None:
            return self.table[state_id][symbol - 1]
        return float(self.func(state_id, symbol, point))

    def scale(self, c: float) -> "Potential":
        if self.table is not None:
            return Potential(
                table=tuple(tuple(c * v for v in row) for row in self.table),
                label=f"{c}*{self.label}" if self.label else "",
            )
        f = self.func
        return Potential(func=lambda st, s, x: c * f(st, s, x), label=self.label)

    def plus(self, other: "Potential") -> "Potential":
        if self.table is not None and other.table is not None:
            return Potential(
                table=tuple(
                    tuple(a + b for a, b in zip(ra, rb))
                    for ra, rb in zip(self.table, other.table)
                ),
                label="+".join(t for t in (self.label, other.label) if t),
            )
        f, g = self, other
        return Potential(
            func=lambda st, s, x: f.value(st, s, x) + g.value(st, s, x),
            label="+".join(t for t in (self.label, other.label) if t),
        )


def zero_potential(model) -> Potential:
    return Potential(
        table=tuple(tuple(0.0 for _ in range(st.l)) for st in model.states),
        label="zero",
    )


def table_potential(model, values, label: str = "") -> Potential:
    """Build a constant potential from nested per-state, per-symbol values."""
    table = []
    for st in model.states:
        row = values[st.id]
        if len(row) != st.l:
            raise ValueError(
                f"state {st.id} needs {st.l} potential values, got {len(row)}"
            )
        table.append(tuple(float(v) for v in row))
    return Potential(table=tuple(table), label=label)


def average_sup(potential: Potential, model, maps, samples: int = 65) -> float:
    """Stationary average of the per-state sup of the potential.

    The sup over points is exact in table mode and grid-sampled otherwise.
    """
    from .environment import stationary_frequencies

    freqs = stationary_frequencies(model)
    if potential.is_constant:
        sups = [max(potential.table[st.id]) for st in model.states]
    else:
        pts = _sample_points(maps, samples)
        sups = [
            max(
                max(potential.value(st.id, s, p) for p in pts)
                for s in range(1, st.l + 1)
            )
            for st in model.states
        ]
    return float(np.dot(freqs, sups))


def _sample_points(maps, samples: int) -> list[np.ndarray]:
    lo, hi = maps.ambient_lo, maps.ambient_hi
    ts = np.linspace(0.0, 1.0, samples)
    if maps.dim == 1:
        return [lo + t * (hi - lo) for t in ts]
    side = max(2, int(round(samples**0.5)))
    ts = np.linspace(0.0, 1.0, side)
    return [
        lo + np.array([a, b]) * (hi - lo)
        for a in ts
        for b in ts
    ]
