"""Command-line front-end: ``hhostokes {solve,convergence,check-law,mesh-info}``."""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .mesh import FAMILIES, MAX_AMPLITUDE, MeshError, generate, load_mesh, mesh_stats
from .rheology import FlowLaw, law_constants, verify_power_framed
from .solver import Discretization, NewtonConfig, SolverError, energy_norm, newton_solve
from .verification import (
    ConvergenceReport,
    LevelResult,
    builtin_case,
    error_pressure,
    error_velocity,
    make_problem,
    max_divergence_residual,
    run_convergence,
    write_convergence_outputs,
)

log = logging.getLogger("hhostokes")

COMMANDS = ("solve", "convergence", "check-law", "mesh-info")
CHECK_LAW_R = (1.5, 1.75, 2.0, 2.25, 2.5, 2.75)

DEFAULTS: dict[str, Any] = {
    "command": None,
    "law": {"kind": "power_law", "mu": 1.0, "delta": 0.0, "a": 2.0, "r": 2.0},
    "family": None,
    "mesh_file": None,
    "amplitude": 0.15,
    "n": 8,
    "levels": [4, 8, 16, 32],
    "k": 1,
    "gamma": None,
    "newton": {
        "tol": 1e-9,
        "max_iter": 50,
        "damping": True,
        "max_halvings": 20,
        "continuation": True,
        "r_step": 0.25,
        "condense": False,
    },
    "quad_boost": 4,
    "out": "out",
    "seed": 0,
    "threads": 1,
    "samples": 10_000,
    "r_values": list(CHECK_LAW_R),
    "deltas": [0.0, 1.0],
    "figure": True,
}

# flag name -> dotted config key
OVERRIDES = {
    "kind": "law.kind",
    "mu": "law.mu",
    "delta": "law.delta",
    "a": "law.a",
    "r": "law.r",
    "family": "family",
    "mesh-file": "mesh_file",
    "amplitude": "amplitude",
    "n": "n",
    "levels": "levels",
    "k": "k",
    "gamma": "gamma",
    "tol": "newton.tol",
    "max-iter": "newton.max_iter",
    "r-step": "newton.r_step",
    "quad-boost": "quad_boost",
    "seed": "seed",
    "samples": "samples",
    "r-values": "r_values",
}
BOOL_OVERRIDES = {
    "condense": "newton.condense",
    "continuation": "newton.continuation",
    "damping": "newton.damping",
    "figure": "figure",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    law: FlowLaw
    family: Optional[str]
    mesh_file: Optional[str]
    amplitude: float
    n: int
    levels: list
    k: int
    gamma: Optional[float]
    newton: NewtonConfig
    quad_boost: int
    out: Path
    seed: int
    threads: int
    samples: int
    r_values: list
    deltas: list
    figure: bool
    raw: dict = field(repr=False, default_factory=dict)


def _merge(base: dict, upd: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in upd.items():
        full = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {full!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {full!r} must be an object")
            out[key] = _merge(base[key], val, full + ".")
        else:
            out[key] = val
    return out


def _set_dotted(d: dict, key: str, val) -> None:
    *head, last = key.split(".")
    for h in head:
        d = d.setdefault(h, {})
    d[last] = val


def _int(name, v, lo=None) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ConfigError(f"{name} must be an integer, got {v!r}")
    v = int(v)
    if lo is not None and v < lo:
        raise ConfigError(f"{name} must be >= {lo}, got {v}")
    return v


def _float(name, v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{name} must be a finite number, got {v!r}")
    return float(v)


def validate(raw: dict) -> RunConfig:
    cmd = raw["command"]
    if cmd not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}, got {cmd!r}")
    lw = raw["law"]
    try:
        law = FlowLaw(
            str(lw["kind"]), _float("mu", lw["mu"]), _float("delta", lw["delta"]), _float("a", lw["a"]), _float("r", lw["r"])
        )
    except ValueError as exc:
        raise ConfigError(f"invalid law: {exc}") from exc
    family, mesh_file = raw["family"], raw["mesh_file"]
    if family is not None and mesh_file is not None:
        raise ConfigError("conflicting mesh specification: give either family or mesh_file, not both")
    if mesh_file is None and family is None:
        family = "cartesian"
    if family is not None and family not in FAMILIES:
        raise ConfigError(f"unknown mesh family {family!r}; expected one of {FAMILIES}")
    if cmd == "convergence" and mesh_file is not None:
        raise ConfigError("convergence needs a mesh family, not a mesh file")
    amplitude = _float("amplitude", raw["amplitude"])
    if not 0 <= amplitude < MAX_AMPLITUDE:
        raise ConfigError(f"amplitude must lie in [0, 1/3), got {amplitude}")
    levels = raw["levels"]
    if not isinstance(levels, list) or len(levels) < 2:
        raise ConfigError("levels must be a list of at least 2 mesh sizes")
    levels = [_int("levels entry", v, 1) for v in levels]
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError(f"levels must be strictly increasing, got {levels}")
    gamma = raw["gamma"]
    if gamma is not None:
        gamma = _float("gamma", gamma)
        c = law_constants(law)
        if not c.sigma_sm <= gamma <= c.sigma_hc:
            raise ConfigError(
                f"gamma={gamma:g} outside the admissible interval [sigma_sm, sigma_hc] = "
                f"[{c.sigma_sm:g}, {c.sigma_hc:g}]"
            )
    nw = raw["newton"]
    newton = NewtonConfig(
        tol=_float("newton.tol", nw["tol"]),
        max_iter=_int("newton.max_iter", nw["max_iter"], 1),
        damping=bool(nw["damping"]),
        max_halvings=_int("newton.max_halvings", nw["max_halvings"], 0),
        continuation=bool(nw["continuation"]),
        r_step=_float("newton.r_step", nw["r_step"]),
        condense=bool(nw["condense"]),
    )
    if not newton.tol > 0 or not 0 < newton.r_step <= 0.25:
        raise ConfigError("newton.tol must be > 0 and newton.r_step in (0, 0.25]")
    r_values = [_float("r_values entry", v) for v in raw["r_values"]]
    if any(v <= 1 for v in r_values):
        raise ConfigError("r_values entries must lie in (1, inf)")
    return RunConfig(
        command=cmd,
        law=law,
        family=family,
        mesh_file=mesh_file,
        amplitude=amplitude,
        n=_int("n", raw["n"], 1),
        levels=levels,
        k=_int("k", raw["k"], 1),
        gamma=gamma,
        newton=newton,
        quad_boost=_int("quad_boost", raw["quad_boost"], 0),
        out=Path(raw["out"]),
        seed=_int("seed", raw["seed"]),
        threads=_int("threads", raw["threads"], 1),
        samples=_int("samples", raw["samples"], 1),
        r_values=r_values,
        deltas=[_float("deltas entry", v) for v in raw["deltas"]],
        figure=bool(raw["figure"]),
        raw=raw,
    )


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hhostokes", description="HHO solver for generalized Stokes flow")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--threads", type=int, help="worker threads for element loops")
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key (dotted)")
    p.add_argument("-v", "--verbose", action="store_true")
    for flag in OVERRIDES:
        p.add_argument(f"--{flag}", type=_parse_value, dest=f"ov_{flag.replace('-', '_')}", metavar=flag.upper())
    for flag in BOOL_OVERRIDES:
        p.add_argument(f"--{flag}", action=argparse.BooleanOptionalAction, default=None, dest=f"ov_{flag}")
    return p


def parse_config(argv: Sequence[str]) -> RunConfig:
    args = build_parser().parse_args(argv)
    raw = copy.deepcopy(DEFAULTS)
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
        raw = _merge(raw, data)
    upd: dict = {"command": args.command}
    for flag, key in {**OVERRIDES, **BOOL_OVERRIDES}.items():
        v = getattr(args, f"ov_{flag.replace('-', '_')}")
        if v is not None:
            _set_dotted(upd, key, v)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        _set_dotted(upd, key.strip(), _parse_value(val))
    if args.threads is not None:
        upd["threads"] = args.threads
    if args.out is not None:
        upd["out"] = args.out
    raw = _merge(raw, upd)
    return validate(raw)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, Path):
        return str(x)
    return x


def write_summary(out: Path, summary: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "summary.json"
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return path


def _newton_dict(cfg: NewtonConfig) -> dict:
    return {k: getattr(cfg, k) for k in ("tol", "max_iter", "damping", "max_halvings", "continuation", "r_step", "condense")}


def _mesh(cfg: RunConfig, n: int):
    if cfg.mesh_file is not None:
        return load_mesh(cfg.mesh_file)
    return generate(cfg.family, n, cfg.amplitude)


def cmd_mesh_info(cfg: RunConfig) -> tuple[int, dict]:
    mesh = _mesh(cfg, cfg.n)
    st = mesh_stats(mesh)
    info = {
        "source": cfg.mesh_file or f"{cfg.family} n={cfg.n}",
        "n_vertices": len(mesh.vertices),
        "n_cells": mesh.n_cells,
        "n_faces": len(mesh.faces),
        "n_boundary_faces": len(mesh.boundary_faces),
        "n_interior_faces": len(mesh.interior_faces),
        "h": mesh.h,
        "regularity": {k: getattr(st, k) for k in st.__dataclass_fields__},
    }
    print(f"mesh: {info['source']}")
    print(f"vertices={info['n_vertices']} cells={info['n_cells']} faces={info['n_faces']} "
          f"(boundary={info['n_boundary_faces']}, interior={info['n_interior_faces']})")
    print(f"h={mesh.h:.10g}")
    for k, v in info["regularity"].items():
        print(f"{k}={v:.6g}")
    return 0, {"command": "mesh-info", "mesh": info}


def cmd_check_law(cfg: RunConfig) -> tuple[int, dict]:
    rows = []
    ok = True
    for r in cfg.r_values:
        for delta in cfg.deltas:
            kind = "power_law" if delta == 0 else "carreau_yasuda"
            law = FlowLaw(kind, cfg.law.mu, delta, cfg.law.a, r)
            rep = verify_power_framed(law, cfg.samples, cfg.seed)
            c = law_constants(law)
            ok &= rep.passed
            rows.append(
                {
                    "r": r,
                    "delta": delta,
                    "a": law.a,
                    "sigma_hc": c.sigma_hc,
                    "sigma_sm": c.sigma_sm,
                    "worst_holder_ratio": rep.worst_holder_ratio,
                    "worst_monotonicity_ratio": rep.worst_monotonicity_ratio,
                    "passed": rep.passed,
                }
            )
            print(
                f"{'PASS' if rep.passed else 'FAIL'} r={r:g} delta={delta:g} a={law.a:g} "
                f"holder={rep.worst_holder_ratio:.6f} monotonicity={rep.worst_monotonicity_ratio:.6f}"
            )
    return (0 if ok else 1), {"command": "check-law", "samples": cfg.samples, "seed": cfg.seed, "laws": rows}


def cmd_solve(cfg: RunConfig) -> tuple[int, dict]:
    mesh = _mesh(cfg, cfg.n)
    disc = Discretization(mesh, cfg.k, cfg.quad_boost, cfg.threads)
    case = builtin_case(cfg.law)
    problem = make_problem(disc, case, cfg.gamma)
    state, nr = newton_solve(problem, None, cfg.newton)
    r = cfg.law.r
    lv = LevelResult(
        n=cfg.n,
        h=mesh.h,
        err_vel=error_velocity(disc, r, state, case),
        err_pre=error_pressure(disc, r, state, case),
        newton_iters=nr.total_iterations,
        converged=nr.converged,
        seconds=0.0,
        max_divergence=max_divergence_residual(problem, state),
        velocity_norm=energy_norm(disc, state.velocity, r),
    )
    rep = ConvergenceReport(cfg.family or Path(cfg.mesh_file).stem, cfg.k, cfg.law, [lv])
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "solve.csv").write_text(rep.to_csv())
    print(f"{'converged' if nr.converged else 'NOT converged'} after {nr.total_iterations} Newton iterations")
    print(f"err_vel={lv.err_vel:.6e} err_pre={lv.err_pre:.6e} max|b_h(u_h,q)|={lv.max_divergence:.3e}")
    summary = {
        "command": "solve",
        "law": cfg.law.as_dict(),
        "gamma": problem.gamma,
        "newton": _newton_dict(cfg.newton),
        "newton_report": {
            "converged": nr.converged,
            "iterations": nr.iterations,
            "total_iterations": nr.total_iterations,
            "message": nr.message,
        },
        "level": lv.__dict__,
        "csv": str(cfg.out / "solve.csv"),
    }
    return (0 if nr.converged else 2), summary


def cmd_convergence(cfg: RunConfig) -> tuple[int, dict]:
    case = builtin_case(cfg.law)
    rep = run_convergence(
        case,
        cfg.family,
        cfg.levels,
        cfg.k,
        cfg.newton,
        cfg.amplitude,
        cfg.gamma,
        cfg.quad_boost,
        cfg.threads,
    )
    paths = write_convergence_outputs(rep, cfg.out, figure=cfg.figure)
    print(rep.to_csv(), end="")
    ok = all(lv.converged for lv in rep.levels)
    summary = {"command": "convergence", "newton": _newton_dict(cfg.newton), **rep.summary(), "outputs": paths}
    return (0 if ok else 2), summary


HANDLERS = {
    "solve": cmd_solve,
    "convergence": cmd_convergence,
    "check-law": cmd_check_law,
    "mesh-info": cmd_mesh_info,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    verbose = "-v" in argv or "--verbose" in argv
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 64
    try:
        status, summary = HANDLERS[cfg.command](cfg)
    except (MeshError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 74
    summary["status"] = status
    summary["config"] = cfg.raw
    path = write_summary(cfg.out, summary)
    log.info("wrote %s", path)
    return status


if __name__ == "__main__":
    sys.exit(main())
