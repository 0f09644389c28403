"""Finite ergodic base system driving the random subshift.

The base is a finite irreducible Markov chain.  Each chain state carries an
alphabet size ``l`` and, for every successor it can reach, a 0/1 transition
matrix of shape ``l(state) x l(successor)``.  Realizing one orbit of the
chain yields an OmegaPath: the sequence of environments seen by the shift,
which is all downstream modules ever look at.

All sampling is seeded and pure: the same (model, seed, horizon) always
yields the same path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonStochasticMatrix, NotIrreducible, OutOfHorizon

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class EnvState:
    """One environment state: alphabet size and per-successor 0/1 matrices."""

    id: int
    l: int
    A_to: dict[int, np.ndarray] = field(default_factory=dict)

    def matrix_to(self, succ_id: int) -> np.ndarray:
        try:
            return self.A_to[succ_id]
        except KeyError:
            raise ConfigError(
                f"state {self.id} has no transition matrix toward state {succ_id}"
            ) from None


@dataclass(frozen=True)
class EnvironmentModel:
    """Finite irreducible Markov base with per-state alphabets.

    Invariants are enforced at construction:

    * every markov row sums to 1 (within 1e-12);
    * the digraph of positive markov entries is strongly connected;
    * every alphabet size is >= 1 and at least one is >= 2;
    * every matrix attached to a positive edge is 0/1 with no zero row
      or column.
    """

    states: tuple[EnvState, ...]
    markov: np.ndarray
    seed: int = 0

    def __post_init__(self) -> None:
        markov = np.asarray(self.markov, dtype=float)
        object.__setattr__(self, "markov", markov)
        markov.setflags(write=False)
        _validate_model(self)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def alphabet(self, state_id: int) -> int:
        return self.states[state_id].l

    def matrix(self, from_id: int, to_id: int) -> np.ndarray:
        return self.states[from_id].matrix_to(to_id)


@dataclass(frozen=True)
class OmegaPath:
    """A realized orbit of the environment: states at offsets 0..horizon."""

    model: EnvironmentModel
    state_ids: tuple[int, ...]

    @property
    def horizon(self) -> int:
        return len(self.state_ids) - 1

    def state(self, k: int) -> int:
        if not 0 <= k <= self.horizon:
            raise OutOfHorizon(f"offset {k} outside path horizon {self.horizon}")
        return self.state_ids[k]

    def alphabet(self, k: int) -> int:
        return self.model.alphabet(self.state(k))

    def matrix(self, k: int) -> np.ndarray:
        """0/1 matrix between offsets k and k+1."""
        if not 0 <= k < self.horizon:
            raise OutOfHorizon(
                f"no transition matrix at offset {k} (horizon {self.horizon})"
            )
        return self.model.matrix(self.state_ids[k], self.state_ids[k + 1])


def _validate_model(model: EnvironmentModel) -> None:
    n = len(model.states)
    if n == 0:
        raise ConfigError("environment needs at least one state")
    for i, st in enumerate(model.states):
        if st.id != i:
            raise ConfigError(f"state ids must be 0..{n - 1} in order, got {st.id} at {i}")
        if st.l < 1:
            raise ConfigError(f"state {i} has alphabet size {st.l} < 1")
    if not any(st.l >= 2 for st in model.states):
        raise ConfigError("at least one state must have alphabet size >= 2")

    markov = model.markov
    if markov.shape != (n, n):
        raise ConfigError(f"markov matrix must be {n}x{n}, got {markov.shape}")
    if np.any(markov < 0):
        raise NonStochasticMatrix("markov entries must be nonnegative")
    sums = markov.sum(axis=1)
    bad = np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)[0]
    if bad.size:
        raise NonStochasticMatrix(
            f"markov row {bad[0]} sums to {sums[bad[0]]!r}, expected 1"
        )
    if not _strongly_connected(markov > 0):
        raise NotIrreducible("positive-entry digraph of markov is not irreducible")

    for i, st in enumerate(model.states):
        for j in np.nonzero(markov[i] > 0)[0]:
            A = np.asarray(st.matrix_to(int(j)))
            lj = model.states[int(j)].l
            if A.shape != (st.l, lj):
                raise ConfigError(
                    f"matrix {i}->{j} has shape {A.shape}, expected ({st.l}, {lj})"
                )
            if not np.isin(A, (0, 1)).all():
                raise ConfigError(f"matrix {i}->{j} has entries outside {{0,1}}")
            if np.any(A.sum(axis=1) == 0) or np.any(A.sum(axis=0) == 0):
                raise ConfigError(f"matrix {i}->{j} has an all-zero row or column")
            A.setflags(write=False)


def _strongly_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    if n == 1:
        return True

    def reach(a: np.ndarray) -> bool:
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            v = stack.pop()
            for w in np.nonzero(a[v])[0]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(int(w))
        return bool(seen.all())

    return reach(adj) and reach(adj.T)


def stationary_frequencies(model: EnvironmentModel) -> np.ndarray:
    """Left eigenvector of the markov matrix for eigenvalue 1, summing to 1."""
    n = model.n_states
    if n == 1:
        return np.array([1.0])
    # Solve pi (M - I) = 0 with the normalization row appended.
    A = np.vstack([(model.markov.T - np.eye(n)), np.ones(n)])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.where(np.abs(pi) < 1e-15, 0.0, pi)
    if np.any(pi < 0):
        raise NotIrreducible("stationary solve produced negative entries")
    return pi / pi.sum()


def sample_environment_path(
    model: EnvironmentModel,
    seed: int,
    horizon: int,
    start_state: int | None = None,
) -> OmegaPath:
    """Realize one orbit of the environment chain.

    The start state is drawn from the stationary distribution unless given
    explicitly.  Output is a pure function of (model, seed, horizon,
    start_state).
    """
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    rng = np.random.default_rng(seed)
    n = model.n_states
    if start_state is None:
        start = int(rng.choice(n, p=stationary_frequencies(model)))
    else:
        if not 0 <= start_state < n:
            raise ConfigError(f"start state {start_state} out of range")
        start = start_state
    states = [start]
    for _ in range(horizon):
        states.append(int(rng.choice(n, p=model.markov[states[-1]])))
    return OmegaPath(model=model, state_ids=tuple(states))
