"""Experiment harness.

Subcommands: pressure, dimension, target-cover, moran, box-dim, validate.
Every run writes its artifacts into an output directory keyed by a stable
hash of the effective configuration, via write-then-rename, so repeated runs
of the same config are byte-identical and failures leave no partial files.

Exit codes: 0 success, 2 configuration error, 3 numeric guard trip,
1 any other domain failure (including validation findings).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .dimension import box_count, dimension_report
from .environment import stationary_frequencies
from .errors import ConfigError, GuardError, RifsdimError
from .geometry import attractor_boxes, calibrate_distortion, validate_maps
from .moran import build_moran_tree, mass_exponent_probe
from .potentials import zero_potential
from .subshift import mixing_index
from .targets import build_target_cover, verify_target_reachability
from .thermo import pressure_estimate, solve_pressure_root


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write_all(outdir: Path, artifacts: dict[str, str]) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    for name, content in artifacts.items():
        tmp = outdir / (name + ".tmp")
        tmp.write_text(content)
        os.replace(tmp, outdir / name)


def _outdir(args, cfg: ExperimentConfig, command: str) -> Path:
    base = args.out or os.environ.get("RIFSDIM_OUT") or "out"
    return Path(base) / f"{command}-{cfg.config_hash}"


def _analysis_depth(args, cfg: ExperimentConfig, default: int = 6) -> int:
    if args.depth is not None:
        return args.depth
    return int(cfg.analysis.get("depth", default))


def _scales(cfg: ExperimentConfig) -> list[float]:
    from .config import _num

    raw = cfg.analysis.get("scales")
    if raw is None:
        return [3.0**-k for k in range(2, 9)]
    return [_num(s, f"analysis.scales[{i}]") for i, s in enumerate(raw)]


def _bracket(cfg: ExperimentConfig) -> tuple[float, float] | None:
    from .config import _num

    raw = cfg.analysis.get("bracket")
    if raw is None:
        return None
    return (_num(raw[0], "analysis.bracket[0]"), _num(raw[1], "analysis.bracket[1]"))


# -- subcommands ---------------------------------------------------------------


def cmd_pressure(args, cfg: ExperimentConfig) -> dict[str, str]:
    schedule = cfg.analysis.get("pressure_schedule") or list(
        range(2, min(cfg.path.horizon, 16) + 1, 2)
    )
    potential = {
        "psi": cfg.psi,
        "phi": cfg.phi,
        "psi-plus-phi": cfg.psi.plus(cfg.phi),
        "zero": zero_potential(cfg.model),
    }[args.potential]
    curve = pressure_estimate(cfg.path, cfg.maps, potential, schedule, cap=cfg.cap)
    summary = {
        "mode": args.mode,
        "potential": args.potential,
        "pressure": curve.extrapolated,
        "uncertainty": curve.uncertainty,
    }
    if args.mode in ("bowen-ruelle", "target"):
        root = solve_pressure_root(
            cfg.path,
            cfg.maps,
            cfg.psi,
            cfg.phi,
            args.mode,
            bracket=_bracket(cfg),
            n=int(cfg.analysis.get("root_n", 8)),
            cap=cfg.cap,
        )
        summary.update(
            root=root.root,
            residual=root.residual,
            bracket=list(root.bracket),
            n_used=root.n_used,
        )
    return {
        "pressure_curve.csv": _csv_text(
            ["n", "value"], [[n, v] for n, v in curve.samples]
        ),
        "summary.json": _json_text(summary),
    }


def cmd_dimension(args, cfg: ExperimentConfig) -> dict[str, str]:
    depth = _analysis_depth(args, cfg)
    report = dimension_report(
        cfg.path,
        cfg.maps,
        cfg.psi,
        cfg.phi,
        cfg.targets,
        depth,
        _scales(cfg),
        root_n=int(cfg.analysis.get("root_n", 8)),
        bracket=_bracket(cfg),
        cap=cfg.cap,
        threads=args.threads,
    )
    record = report.to_record()
    record["depth"] = depth
    curves = {}
    for name, bc in (("attractor", report.attractor), ("cover", report.cover)):
        rows = [
            [np.log(1.0 / s), np.log(c)] for s, c in zip(bc.scales, bc.counts)
        ]
        curves[f"{name}_curve.csv"] = _csv_text(["log_inv_scale", "log_count"], rows)
    return {
        "dimension.json": _json_text(record),
        "dimension.csv": _csv_text(
            sorted(record.keys()), [[record[k] for k in sorted(record.keys())]]
        ),
        **curves,
    }


def cmd_target_cover(args, cfg: ExperimentConfig) -> dict[str, str]:
    depth = _analysis_depth(args, cfg)
    lo_depth = int(cfg.analysis.get("cover_min_depth", depth))
    cells = build_target_cover(
        cfg.path, cfg.maps, cfg.phi, cfg.targets, (lo_depth, depth), cap=cfg.cap
    )
    d = cfg.maps.dim
    header = (
        ["depth", "word"]
        + [f"box_lo{i}" for i in range(d)]
        + [f"box_hi{i}" for i in range(d)]
        + ["diameter"]
    )
    rows = [
        [len(c.word), str(c.word), *c.lo.tolist(), *c.hi.tolist(), c.diameter]
        for c in cells
    ]
    return {"cover.csv": _csv_text(header, rows)}


def cmd_moran(args, cfg: ExperimentConfig) -> dict[str, str]:
    if cfg.schedule is None:
        raise ConfigError("schedule: section required for the moran command")
    gap = cfg.schedule.gap
    cert = mixing_index(cfg.path, 0, min(gap + 4, cfg.path.horizon))
    if gap < cert.M:
        raise ConfigError(
            f"schedule.gap: gap {gap} is below the mixing index {cert.M}"
        )
    root = build_moran_tree(
        cfg.path,
        cfg.maps,
        cfg.psi,
        cfg.phi,
        cfg.targets,
        cfg.schedule,
        seed=cfg.seed,
        cap=cfg.cap,
    )
    probe_cfg = cfg.analysis.get("probe", {})
    from .config import _num

    radii = [
        _num(r, f"analysis.probe.radii[{i}]")
        for i, r in enumerate(probe_cfg.get("radii", [3.0**-k for k in range(2, 10)]))
    ]
    num_balls = int(probe_cfg.get("num_balls", 16))
    probe_seed = int(probe_cfg.get("seed", cfg.seed))
    min_exp, rows = mass_exponent_probe(root, num_balls, radii, probe_seed)

    tree_lines = []
    for node in root.walk():
        tree_lines.append(
            json.dumps(
                {
                    "generation": node.generation,
                    "word": str(node.word),
                    "box_lo": [float(v) for v in node.box.lo],
                    "box_hi": [float(v) for v in node.box.hi],
                    "mass": node.mass,
                },
                sort_keys=True,
            )
        )
    d = cfg.maps.dim
    probe_rows = [
        [*row.center, row.radius, row.mass, row.exponent] for row in rows
    ]
    q0 = solve_pressure_root(
        cfg.path,
        cfg.maps,
        cfg.psi,
        cfg.phi,
        "target",
        bracket=_bracket(cfg),
        n=int(cfg.analysis.get("root_n", 8)),
        cap=cfg.cap,
    )
    summary = {
        "generations": cfg.schedule.generations,
        "leaves": len(root.leaves()),
        "min_exponent": min_exp,
        "q0": q0.root,
        "probe_count": len(rows),
    }
    return {
        "tree.ndjson": "\n".join(tree_lines) + "\n",
        "probe.csv": _csv_text(
            [f"center{i}" for i in range(d)] + ["radius", "mass", "exponent"],
            probe_rows,
        ),
        "summary.json": _json_text(summary),
    }


def cmd_box_dim(args, cfg: ExperimentConfig) -> dict[str, str]:
    depth = _analysis_depth(args, cfg)
    boxes = attractor_boxes(cfg.path, cfg.maps, depth, cap=cfg.cap)
    result = box_count(
        boxes, _scales(cfg), cfg.maps.ambient_lo, cfg.maps.ambient_hi,
        threads=args.threads,
    )
    fit = {
        "slope": result.slope,
        "slope_stderr": result.slope_stderr,
        "window": list(result.window),
        "depth": depth,
    }
    return {
        "counts.csv": _csv_text(
            ["scale", "count"], [[s, c] for s, c in zip(result.scales, result.counts)]
        ),
        "plot.csv": _csv_text(
            ["log_inv_scale", "log_count"],
            [[np.log(1.0 / s), np.log(c)] for s, c in zip(result.scales, result.counts)],
        ),
        "fit.json": _json_text(fit),
    }


def cmd_validate(args, cfg: ExperimentConfig) -> tuple[dict[str, str], bool]:
    checks: list[dict] = []

    def record(name: str, ok: bool, detail: str) -> None:
        checks.append({"check": name, "ok": bool(ok), "detail": detail})

    freqs = stationary_frequencies(cfg.model)
    record("environment", True, f"stationary frequencies {[round(f, 6) for f in freqs]}")
    try:
        validate_maps(cfg.maps, cfg.model)
        record("maps", True, "images nested, interiors disjoint, contracting on average")
    except ConfigError as e:
        record("maps", False, str(e))

    probe_span = min(8, cfg.path.horizon - 1)
    try:
        cert = mixing_index(cfg.path, 0, probe_span)
        record("mixing", True, f"mixing index {cert.M} at offset 0")
    except RifsdimError as e:
        record("mixing", False, str(e))

    budget = calibrate_distortion(cfg.path, cfg.maps, min(8, cfg.path.horizon))
    record("distortion", True, f"eps(1..{len(budget.eps)}) = {[round(e, 6) for e in budget.eps]}")

    depth = int(cfg.analysis.get("reach_depth", 3))
    gap_bound = int(cfg.analysis.get("reach_gap_bound", 2))
    report = verify_target_reachability(
        cfg.path, cfg.maps, cfg.targets, depth, gap_bound, cap=cfg.cap
    )
    record(
        "target-reachability",
        report.ok,
        f"max wait {report.max_k}, failures "
        f"{[str(w) for w in report.failures[:8]]}",
    )

    ok = all(c["ok"] for c in checks)
    artifacts = {"validate.json": _json_text({"ok": ok, "checks": checks})}
    return artifacts, ok


# -- entry point ----------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rifsdim",
        description="Random-subshift pressure, shrinking targets, and dimension estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the experiment JSON")
        p.add_argument("--out", default=None, help="output base directory")
        p.add_argument("--seed", type=int, default=None, help="override environment seed")
        p.add_argument("--threads", type=int, default=1, help="worker cap (results identical)")
        p.add_argument("--depth", type=int, default=None, help="override analysis depth")

    p = sub.add_parser("pressure", help="pressure curve and optional root")
    common(p)
    p.add_argument("--mode", choices=["curve", "bowen-ruelle", "target"], default="curve")
    p.add_argument(
        "--potential",
        choices=["psi", "phi", "psi-plus-phi", "zero"],
        default="psi",
    )

    for name in ("dimension", "target-cover", "moran", "box-dim", "validate"):
        common(sub.add_parser(name))
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        outdir = _outdir(args, cfg, args.command)
        if args.command == "pressure":
            artifacts = cmd_pressure(args, cfg)
        elif args.command == "dimension":
            artifacts = cmd_dimension(args, cfg)
        elif args.command == "target-cover":
            artifacts = cmd_target_cover(args, cfg)
        elif args.command == "moran":
            artifacts = cmd_moran(args, cfg)
        elif args.command == "box-dim":
            artifacts = cmd_box_dim(args, cfg)
        else:
            artifacts, ok = cmd_validate(args, cfg)
            artifacts["effective_config.json"] = _json_text(cfg.raw)
            _write_all(outdir, artifacts)
            for c in json.loads(artifacts["validate.json"])["checks"]:
                status = "ok" if c["ok"] else "FAIL"
                print(f"[{status}] {c['check']}: {c['detail']}")
            print(f"artifacts: {outdir}")
            return 0 if ok else 1
        artifacts["effective_config.json"] = _json_text(cfg.raw)
        _write_all(outdir, artifacts)
        print(f"artifacts: {outdir}")
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except GuardError as e:
        print(f"guard tripped: {e}", file=sys.stderr)
        return 3
    except RifsdimError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
