"""Declarative experiment configuration.

One JSON document describes the environment chain, the map family, the
potentials, the targets, the optional nesting schedule, and analysis knobs.
Numbers may be written as JSON numbers or as strings ("1/3", "0.25"); string
forms go through exact rationals before conversion, so grid-aligned ratios
stay as sharp as doubles allow.

Every validation failure raises ConfigError with the JSON path of the
offending entry.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .environment import EnvironmentModel, EnvState, OmegaPath, sample_environment_path
from .errors import ConfigError
from .geometry import ContractionMap, MapFamily, log_contraction_potential, validate_maps
from .moran import ScheduleSpec
from .potentials import Potential, average_sup, table_potential, zero_potential
from .targets import TargetSpec

DEFAULT_CAP = 10_000_000


def _num(value, where: str) -> float:
    if isinstance(value, bool) or value is None:
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Fraction(value))
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{where}: cannot parse number {value!r}") from None
    raise ConfigError(f"{where}: expected a number, got {type(value).__name__}")


def _int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return value


def _vec(value, where: str) -> tuple[float, ...]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{where}: expected a list of numbers")
    return tuple(_num(v, f"{where}[{i}]") for i, v in enumerate(value))


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return section[key]


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed, validated experiment: built objects plus the canonical hash."""

    raw: dict
    model: EnvironmentModel
    path: OmegaPath
    maps: MapFamily
    psi: Potential
    phi: Potential
    targets: TargetSpec
    schedule: ScheduleSpec | None
    analysis: dict
    seed: int

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    @property
    def cap(self) -> int:
        return int(self.analysis.get("cylinder_cap", DEFAULT_CAP))


def _build_environment(section: dict) -> tuple[EnvironmentModel, int, int, int | None]:
    where = "environment"
    states_raw = _require(section, "states", where)
    if not isinstance(states_raw, list) or not states_raw:
        raise ConfigError(f"{where}.states: expected a nonempty list")
    states = []
    for i, s in enumerate(states_raw):
        w = f"{where}.states[{i}]"
        l = _int(_require(s, "l", w), f"{w}.l")
        a_to = {}
        for key, mat in s.get("A_to", {}).items():
            try:
                succ = int(key)
            except ValueError:
                raise ConfigError(f"{w}.A_to: key {key!r} is not a state id") from None
            arr = np.array(mat, dtype=int)
            a_to[succ] = arr
        states.append(EnvState(id=i, l=l, A_to=a_to))
    markov_raw = _require(section, "markov", where)
    markov = np.array(
        [[_num(x, f"{where}.markov[{i}][{j}]") for j, x in enumerate(row)]
         for i, row in enumerate(markov_raw)],
        dtype=float,
    )
    seed = _int(section.get("seed", 0), f"{where}.seed")
    horizon = _int(_require(section, "horizon", where), f"{where}.horizon")
    start = section.get("start_state")
    if start is not None:
        start = _int(start, f"{where}.start_state")
    try:
        model = EnvironmentModel(states=tuple(states), markov=markov, seed=seed)
    except ConfigError as e:
        raise ConfigError(f"{where}: {e}") from None
    return model, seed, horizon, start


def _build_maps(section: dict, model: EnvironmentModel) -> MapFamily:
    where = "maps"
    amb = _require(section, "ambient", where)
    lo = np.array(_vec(_require(amb, "lo", f"{where}.ambient"), f"{where}.ambient.lo"))
    hi = np.array(_vec(_require(amb, "hi", f"{where}.ambient"), f"{where}.ambient.hi"))
    per_state = _require(section, "per_state", where)
    if len(per_state) != model.n_states:
        raise ConfigError(
            f"{where}.per_state: {len(per_state)} entries for {model.n_states} states"
        )
    rows = []
    for i, sym_maps in enumerate(per_state):
        if len(sym_maps) != model.states[i].l:
            raise ConfigError(
                f"{where}.per_state[{i}]: {len(sym_maps)} maps for alphabet "
                f"size {model.states[i].l}"
            )
        row = []
        for j, m in enumerate(sym_maps):
            w = f"{where}.per_state[{i}][{j}]"
            try:
                row.append(
                    ContractionMap(
                        ratio=_num(_require(m, "ratio", w), f"{w}.ratio"),
                        offset=_vec(_require(m, "offset", w), f"{w}.offset"),
                        rotation=_num(m.get("rotation", 0.0), f"{w}.rotation"),
                        perturbation=_num(m.get("perturbation", 0.0), f"{w}.perturbation"),
                    )
                )
            except ConfigError as e:
                raise ConfigError(f"{w}: {e}") from None
        rows.append(tuple(row))
    try:
        fam = MapFamily(ambient_lo=lo, ambient_hi=hi, maps=tuple(rows))
        validate_maps(fam, model)
    except ConfigError as e:
        raise ConfigError(f"{where}: {e}") from None
    return fam


def _build_potential(spec, model, maps, psi: Potential | None, where: str) -> Potential:
    if spec == "log-contraction":
        return log_contraction_potential(maps)
    if spec == "zero":
        return zero_potential(model)
    if isinstance(spec, dict) and "alpha" in spec:
        if psi is None:
            raise ConfigError(f"{where}: alpha form needs psi defined first")
        return psi.scale(_num(spec["alpha"], f"{where}.alpha"))
    if isinstance(spec, dict) and "table" in spec:
        table = [
            [_num(v, f"{where}.table[{i}][{j}]") for j, v in enumerate(row)]
            for i, row in enumerate(spec["table"])
        ]
        try:
            return table_potential(model, table, label=where.split(".")[-1])
        except ValueError as e:
            raise ConfigError(f"{where}: {e}") from None
    raise ConfigError(
        f"{where}: expected 'log-contraction', 'zero', {{'alpha': a}} or {{'table': ...}}"
    )


def _build_targets(section: dict) -> TargetSpec:
    where = "targets"
    kind = _require(section, "kind", where)
    point = section.get("point")
    try:
        return TargetSpec(
            kind=kind,
            rule=section.get("rule", "fixed" if point is not None else "lex-smallest"),
            point=_vec(point, f"{where}.point") if point is not None else None,
            membership_depth=_int(section.get("membership_depth", 20), f"{where}.membership_depth"),
        )
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None


def _build_schedule(section: dict | None) -> ScheduleSpec | None:
    if section is None:
        return None
    where = "schedule"
    try:
        mc = section.get("max_children")
        return ScheduleSpec(
            generations=_int(_require(section, "generations", where), f"{where}.generations"),
            epsilons=tuple(
                _num(e, f"{where}.epsilons[{i}]")
                for i, e in enumerate(_require(section, "epsilons", where))
            ),
            p_min=tuple(
                _int(p, f"{where}.p_min[{i}]")
                for i, p in enumerate(_require(section, "p_min", where))
            ),
            gap=_int(_require(section, "gap", where), f"{where}.gap"),
            max_children=tuple(
                None if m is None else _int(m, f"{where}.max_children[{i}]")
                for i, m in enumerate(mc)
            )
            if mc is not None
            else None,
            root_level=_int(section.get("root_level", 10), f"{where}.root_level"),
        )
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None


def load_config(source, seed_override: int | None = None) -> ExperimentConfig:
    """Parse a config from a path, JSON text, or dict; build and validate."""
    if isinstance(source, dict):
        raw = json.loads(json.dumps(source))
    else:
        text = Path(source).read_text() if not str(source).lstrip().startswith("{") else str(source)
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")

    env_section = _require(raw, "environment", "config")
    if seed_override is not None:
        env_section = dict(env_section)
        env_section["seed"] = seed_override
        raw = dict(raw)
        raw["environment"] = env_section

    model, seed, horizon, start = _build_environment(env_section)
    path = sample_environment_path(model, seed, horizon, start_state=start)
    maps = _build_maps(_require(raw, "maps", "config"), model)

    pots = _require(raw, "potentials", "config")
    psi = _build_potential(
        _require(pots, "psi", "potentials"), model, maps, None, "potentials.psi"
    )
    phi = _build_potential(
        _require(pots, "phi", "potentials"), model, maps, psi, "potentials.phi"
    )
    # psi must contract on average; phi may vanish (the q0 == t0 degenerate
    # case) but never expand.
    if average_sup(psi, model, maps) >= 0:
        raise ConfigError(
            "potentials.psi: not negative on average over the stationary chain"
        )
    if average_sup(phi, model, maps) > 0:
        raise ConfigError(
            "potentials.phi: positive on average over the stationary chain"
        )

    targets = _build_targets(_require(raw, "targets", "config"))
    schedule = _build_schedule(raw.get("schedule"))
    analysis = raw.get("analysis", {})
    if not isinstance(analysis, dict):
        raise ConfigError("analysis: expected an object")

    return ExperimentConfig(
        raw=raw,
        model=model,
        path=path,
        maps=maps,
        psi=psi,
        phi=phi,
        targets=targets,
        schedule=schedule,
        analysis=analysis,
        seed=seed,
    )
