"""Command-line entry point.

Usage::

    spinflip <command> [--config run.yaml] [--out DIR] [--seed N] [--workers N] [--resume]
    spinflip export RESULTS_DIR [--format csv|json]

Commands: dress, optimize, qsl, sweep-detuning, sweep-surface, sweep-optical,
robust, scan.  The YAML schema is documented in ``README.md`` and by
:data:`DEFAULTS`.  Every run writes ``manifest.json`` (resolved config, seed,
version, results) to the output directory; failures exit nonzero and write
``error.json`` with a machine-readable code.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dressed import TWO_PI, Branch, DressingParams, dress_pair, dress_single
from .experiments import (
    GridAxis,
    Table,
    run_detuning_sweep,
    run_optical_blockade_sweep,
    run_qsl_surface,
    run_robust_comparison,
)
from .grape import (
    BracketFailedError,
    ControlProblem,
    Cost,
    OptimizeOptions,
    optimize_waveform,
    qsl_search,
)
from .hamiltonian import microwave_system, optical_system
from .metrics import cz_fidelity
from .propagator import load_waveform, propagate, save_waveform
from .robust import Axis, EnsembleSpec, Perturbation, sensitivity_scan

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COMMANDS = (
    "dress",
    "optimize",
    "qsl",
    "sweep-detuning",
    "sweep-surface",
    "sweep-optical",
    "robust",
    "scan",
)

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "command": None,
    "seed": 0,
    "physics": {
        "system": "microwave",
        "omega_L_mhz": 10.0,
        "delta_L_mhz": -5.9,
        "omega_mw_mhz": 1.0,
        "v_rr_mhz": None,
        "vrr_over_omega_L": None,
        "rydberg_lifetime_us": 150.0,
        "branch": None,
    },
    "waveform": {"n_segments": 40, "tau_us": 1.3, "file": None},
    "optimizer": {
        "max_iter": 2000,
        "gtol": 1e-12,
        "restarts": 5,
        "eps_f": 1e-9,
        "stall": 1e-3,
        "cost": "fidelity",
        "tr_weight": 0.0,
    },
    "qsl": {"epsilon": 1e-4, "tau_min_us": 1.0, "tau_max_us": 1.3},
    "sweep": {
        "delta_L_mhz": {"min": -12.0, "max": 0.0, "count": 25, "scale": "linear", "extra": []},
        "ratio": {"min": 1.0, "max": 30.0, "count": 8, "scale": "log", "extra": []},
        "delta_over_omega_L": {
            "min": -1.75, "max": 0.0, "count": 8, "scale": "linear", "extra": []
        },
        "vrr_over_omega_L": {
            "min": 0.1, "max": 100.0, "count": 13, "scale": "log", "extra": [0.2, 0.5]
        },
    },
    "ensemble": {
        "members": [
            {"omega_factor": 1.0, "weight": 0.5},
            {"omega_factor": 1.02, "weight": 0.25},
            {"omega_factor": 0.98, "weight": 0.25},
        ],
        "track_resonance": True,
    },
    "robust": {
        "tau_star_us": None,
        "robust_tau_us": None,
        "robust_restarts": 8,
        "omega_scan": {"min": 0.96, "max": 1.04, "count": 33, "scale": "linear", "extra": []},
        "delta_scan_mhz": {"min": -1.0, "max": 1.0, "count": 41, "scale": "linear", "extra": []},
    },
    "scan": {
        "axis": "omega_L_common",
        "grid": {"min": 0.96, "max": 1.04, "count": 33, "scale": "linear", "extra": []},
    },
}


class CliError(Exception):
    """Failure with a machine-readable ``code`` and optional offending ``field``."""

    def __init__(self, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.code = code
        self.field = field

    def record(self) -> dict:
        rec = {"error": self.code, "message": str(self)}
        if self.field is not None:
            rec["field"] = self.field
        return rec


def _invalid(field: str, message: str) -> CliError:
    return CliError("CONFIG_INVALID", f"{field}: {message}", field)


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        name = f"{prefix}{key}"
        if key not in base:
            raise _invalid(name, "unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise _invalid(name, "expected a mapping")
            out[key] = _merge(base[key], value, name + ".")
        else:
            out[key] = value
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError("CONFIG_INVALID", f"config file {p} does not exist", "config")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise CliError("CONFIG_INVALID", f"cannot parse {p}: {exc}", "config") from None
    if not isinstance(data, dict):
        raise CliError("CONFIG_INVALID", "config must be a mapping", "config")
    return data


def _number(cfg, section, key, positive=False, nonneg=False, allow_none=False):
    value = cfg[section][key]
    name = f"{section}.{key}"
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _invalid(name, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise _invalid(name, "must be finite")
    if positive and not value > 0:
        raise _invalid(name, f"must be positive, got {value!r}")
    if nonneg and value < 0:
        raise _invalid(name, f"must be non-negative, got {value!r}")
    return value


def _axis(cfg_axis: dict, name: str) -> GridAxis:
    try:
        return GridAxis(
            name,
            float(cfg_axis["min"]),
            float(cfg_axis["max"]),
            int(cfg_axis["count"]),
            cfg_axis.get("scale", "linear"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise _invalid(name, str(exc)) from None


def _grid(cfg_axis: dict, name: str) -> np.ndarray:
    """Axis values merged with the optional ``extra`` points, sorted and unique."""
    values = _axis(cfg_axis, name).values()
    extra = cfg_axis.get("extra") or []
    if not isinstance(extra, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)
        for x in extra
    ):
        raise _invalid(f"{name}.extra", "must be a list of numbers")
    return np.unique(np.concatenate([values, np.asarray(extra, dtype=float)]))


def resolve_config(raw: dict, command: str | None = None, seed: int | None = None) -> dict:
    """Merge ``raw`` over :data:`DEFAULTS` and validate every field."""
    cfg = _merge(DEFAULTS, raw)
    if command is not None:
        cfg["command"] = command
    if seed is not None:
        cfg["seed"] = seed
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise _invalid("schema_version", f"unsupported version {cfg['schema_version']!r}")
    if cfg["command"] not in COMMANDS:
        raise _invalid("command", f"must be one of {', '.join(COMMANDS)}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise _invalid("seed", "must be a non-negative integer")

    phys = cfg["physics"]
    if phys["system"] not in ("microwave", "optical"):
        raise _invalid("physics.system", "must be microwave or optical")
    for key in ("omega_L_mhz", "omega_mw_mhz", "rydberg_lifetime_us"):
        _number(cfg, "physics", key, positive=True)
    _number(cfg, "physics", "delta_L_mhz")
    _number(cfg, "physics", "v_rr_mhz", nonneg=True, allow_none=True)
    _number(cfg, "physics", "vrr_over_omega_L", nonneg=True, allow_none=True)
    if phys["branch"] not in (None, "lower", "upper"):
        raise _invalid("physics.branch", "must be lower, upper or null")

    wf = cfg["waveform"]
    if not isinstance(wf["n_segments"], int) or wf["n_segments"] < 2:
        raise _invalid("waveform.n_segments", "must be an integer >= 2")
    _number(cfg, "waveform", "tau_us", positive=True)
    if wf["file"] is not None and not Path(wf["file"]).exists():
        raise _invalid("waveform.file", f"{wf['file']} does not exist")
    if cfg["command"] == "scan" and wf["file"] is None:
        raise _invalid("waveform.file", "scan needs a waveform file")

    for key in ("max_iter", "restarts"):
        v = cfg["optimizer"][key]
        if not isinstance(v, int) or v < 1:
            raise _invalid(f"optimizer.{key}", "must be a positive integer")
    for key in ("gtol", "eps_f", "stall"):
        _number(cfg, "optimizer", key, positive=True)
    _number(cfg, "optimizer", "tr_weight", nonneg=True)
    try:
        Cost(cfg["optimizer"]["cost"])
    except ValueError:
        raise _invalid("optimizer.cost", "must be fidelity or fidelity_minus_tr_penalty") from None

    _number(cfg, "qsl", "epsilon", positive=True)
    _number(cfg, "qsl", "tau_min_us", positive=True)
    _number(cfg, "qsl", "tau_max_us", positive=True)
    if not cfg["qsl"]["tau_min_us"] < cfg["qsl"]["tau_max_us"]:
        raise _invalid("qsl.tau_min_us", "must be below qsl.tau_max_us")

    for name, spec in cfg["sweep"].items():
        _grid(spec, f"sweep.{name}")
    for name in ("omega_scan", "delta_scan_mhz"):
        _grid(cfg["robust"][name], f"robust.{name}")
    for key in ("tau_star_us", "robust_tau_us"):
        _number(cfg, "robust", key, positive=True, allow_none=True)
    try:
        Axis(cfg["scan"]["axis"])
    except ValueError:
        raise _invalid("scan.axis", "must be omega_L_common or delta_L1") from None
    _grid(cfg["scan"]["grid"], "scan.grid")
    _ensemble(cfg)
    try:
        _dressing(cfg)
    except ValueError as exc:
        field = str(exc).split(":")[0].replace("invalid ", "")
        raise _invalid(f"physics.{field}", str(exc)) from None
    return cfg


def _dressing(cfg) -> DressingParams:
    phys = cfg["physics"]
    branch = None if phys["branch"] is None else Branch(phys["branch"])
    v = math.inf if phys["v_rr_mhz"] is None else phys["v_rr_mhz"]
    return DressingParams.from_mhz(
        phys["omega_L_mhz"],
        phys["delta_L_mhz"],
        phys["omega_mw_mhz"],
        v_rr=v,
        gamma_r=1.0 / phys["rydberg_lifetime_us"],
        branch=branch,
    )


def _ensemble(cfg) -> EnsembleSpec:
    ens = cfg["ensemble"]
    members = []
    try:
        for i, m in enumerate(ens["members"]):
            unknown = set(m) - {
                "omega_factor",
                "omega_factor1",
                "omega_factor2",
                "delta_offset1_mhz",
                "delta_offset2_mhz",
                "weight",
            }
            if unknown:
                raise _invalid(f"ensemble.members[{i}]", f"unknown keys {sorted(unknown)}")
            f = m.get("omega_factor", 1.0)
            pert = Perturbation(
                m.get("omega_factor1", f),
                m.get("omega_factor2", f),
                TWO_PI * m.get("delta_offset1_mhz", 0.0),
                TWO_PI * m.get("delta_offset2_mhz", 0.0),
            )
            members.append((pert, m["weight"]))
        return EnsembleSpec(tuple(members), bool(ens["track_resonance"]))
    except CliError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise _invalid("ensemble.members", str(exc)) from None


def _opts(cfg) -> OptimizeOptions:
    o = cfg["optimizer"]
    return OptimizeOptions(
        max_iter=o["max_iter"],
        gtol=o["gtol"],
        restarts=o["restarts"],
        seed=cfg["seed"],
        eps_f=o["eps_f"],
        stall=o["stall"],
    )


def _system(cfg, gamma_r: float = 0.0):
    phys = cfg["physics"]
    if phys["system"] == "optical":
        omega_L = TWO_PI * phys["omega_L_mhz"]
        ratio = phys["vrr_over_omega_L"]
        if ratio is not None:
            v = ratio * omega_L
        elif phys["v_rr_mhz"] is not None:
            v = TWO_PI * phys["v_rr_mhz"]
        else:
            v = math.inf
        return optical_system(omega_L, TWO_PI * phys["delta_L_mhz"], v, gamma_r)
    return microwave_system(_dressing(cfg), gamma_r=gamma_r)


def _problem(cfg, tau=None) -> ControlProblem:
    o = cfg["optimizer"]
    return ControlProblem(
        _system(cfg),
        cfg["waveform"]["n_segments"],
        cfg["waveform"]["tau_us"] if tau is None else tau,
        Cost(o["cost"]),
        o["tr_weight"],
    )


def _gamma_r(cfg) -> float:
    return 1.0 / cfg["physics"]["rydberg_lifetime_us"]


def _gate_summary(cfg, system, wf) -> dict:
    rec = propagate(system, wf)
    f_u = cz_fidelity(rec).fidelity
    g = _gamma_r(cfg)
    decayed = propagate(system.with_decay(g), wf, initial_states=())
    return {
        "fidelity": f_u,
        "t_r_us": rec.t_r,
        "fidelity_r_estimate": f_u * (1 - g * rec.t_r),
        "fidelity_decay_nonhermitian": cz_fidelity(decayed).fidelity,
    }


def cmd_dress(cfg, out: Path, args) -> dict:
    p = _dressing(cfg)
    atom, pair = dress_single(p), dress_pair(p)
    res = {
        "j_mhz": pair.j / TWO_PI,
        "cos_half_theta": atom.cos_half_theta,
        "sin_half_theta": atom.sin_half_theta,
        "alpha": pair.alpha,
        "beta": pair.beta,
        "gamma": pair.gamma,
        "omega_mw_eff_mhz": atom.omega_mw_eff / TWO_PI,
        "omega_mw_eff_prime_mhz": pair.omega_mw_eff_prime / TWO_PI,
        "gamma_a_over_gamma_r": atom.sin_half_theta**2,
        "gamma_aa_over_gamma_r": pair.beta**2 + 2 * pair.gamma**2,
        "light_shift_mhz": atom.e_ls1 / TWO_PI,
        "branch": p.resolved_branch.value,
    }
    print(f"J/2pi = {res['j_mhz']:.6f} MHz")
    print(f"|a~>  amplitudes (a, r)      = {atom.cos_half_theta:.4f}, {atom.sin_half_theta:.4f}")
    print(f"|aa~> amplitudes (aa, ar+, rr) = {pair.alpha:.4f}, {pair.beta:.4f}, {pair.gamma:.4f}")
    print(f"Gamma_a = {res['gamma_a_over_gamma_r']:.4f} Gamma_r")
    print(f"Gamma_aa = {res['gamma_aa_over_gamma_r']:.4f} Gamma_r")
    print(f"Omega_mw~/2pi = {res['omega_mw_eff_mhz']:.4f} MHz, "
          f"Omega_mw~'/2pi = {res['omega_mw_eff_prime_mhz']:.4f} MHz")
    (out / "dress.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
    return {"results": res, "files": ["dress.json"]}


def cmd_optimize(cfg, out: Path, args) -> dict:
    problem = _problem(cfg)
    init = None
    if cfg["waveform"]["file"]:
        init = load_waveform(cfg["waveform"]["file"]).with_tau(problem.tau)
    res = optimize_waveform(problem, init, _opts(cfg))
    save_waveform(res.waveform, out / "waveform.txt")
    summary = _gate_summary(cfg, problem.system, res.waveform)
    summary.update(
        objective=res.fidelity,
        converged=res.converged,
        iterations=res.iterations,
        restarts_used=res.restarts_used,
        tau_us=problem.tau,
    )
    print(f"F = {summary['fidelity']:.10f} at tau = {problem.tau:g} us "
          f"(T_r = {summary['t_r_us']:.4f} us)")
    return {"results": summary, "files": ["waveform.txt"]}


def cmd_qsl(cfg, out: Path, args) -> dict:
    q = cfg["qsl"]
    result = qsl_search(
        _problem(cfg, q["tau_max_us"]),
        (q["tau_min_us"], q["tau_max_us"]),
        q["epsilon"],
        _opts(cfg),
    )
    save_waveform(result.waveform, out / "waveform.txt")
    res = {
        "tau_star_us": result.tau_star,
        "fidelity": result.fidelity,
        "bracket_us": list(result.bracket),
        "probes": [[t, f] for t, f in result.probes],
        "epsilon": result.epsilon,
    }
    print(f"tau* = {result.tau_star:.6g} us (bracket {result.bracket[0]:.6g}..{result.bracket[1]:.6g})")
    return {"results": res, "files": ["waveform.txt"]}


def _table_result(table: Table, name: str) -> dict:
    ok = sum(1 for s in table.column("status") if s == "ok")
    print(f"{name}: {len(table.rows)} points, {ok} ok -> {name}.csv")
    return {"results": {"points": len(table.rows), "ok": ok}, "tables": [f"{name}.csv"]}


def _sweep_kwargs(cfg, args, out):
    return {
        "n_segments": cfg["waveform"]["n_segments"],
        "epsilon": cfg["qsl"]["epsilon"],
        "opts": _opts(cfg),
        "out_dir": out,
        "workers": args.workers,
        "resume": args.resume,
    }


def cmd_sweep_detuning(cfg, out: Path, args) -> dict:
    phys = cfg["physics"]
    grid = _grid(cfg["sweep"]["delta_L_mhz"], "sweep.delta_L_mhz")
    table = run_detuning_sweep(
        TWO_PI * phys["omega_L_mhz"],
        TWO_PI * phys["omega_mw_mhz"],
        TWO_PI * grid,
        _gamma_r(cfg),
        **_sweep_kwargs(cfg, args, out),
    )
    return _table_result(table, "detuning_sweep")


def cmd_sweep_surface(cfg, out: Path, args) -> dict:
    sw = cfg["sweep"]
    table = run_qsl_surface(
        _grid(sw["ratio"], "sweep.ratio"),
        _grid(sw["delta_over_omega_L"], "sweep.delta_over_omega_L"),
        omega_mw=TWO_PI * cfg["physics"]["omega_mw_mhz"],
        **_sweep_kwargs(cfg, args, out),
    )
    return _table_result(table, "qsl_surface")


def cmd_sweep_optical(cfg, out: Path, args) -> dict:
    table = run_optical_blockade_sweep(
        _grid(cfg["sweep"]["vrr_over_omega_L"], "sweep.vrr_over_omega_L"),
        omega_L=TWO_PI * cfg["physics"]["omega_L_mhz"],
        **_sweep_kwargs(cfg, args, out),
    )
    return _table_result(table, "optical_sweep")


def cmd_robust(cfg, out: Path, args) -> dict:
    rb = cfg["robust"]
    opts = _opts(cfg)
    comp = run_robust_comparison(
        _problem(cfg),
        _ensemble(cfg),
        tau_star=rb["tau_star_us"],
        robust_tau=rb["robust_tau_us"],
        opts=opts,
        robust_opts=replace(opts, restarts=rb["robust_restarts"]),
        omega_grid=_grid(rb["omega_scan"], "robust.omega_scan"),
        delta_grid=_grid(rb["delta_scan_mhz"], "robust.delta_scan_mhz"),
        gamma_r=_gamma_r(cfg),
        out_dir=out,
        resume=args.resume,
    )
    res = {
        "tau_star_us": comp.tau_star,
        "optimal_tau_us": comp.optimal.tau,
        "optimal_fidelity": comp.optimal_fidelity,
        "robust_tau_us": comp.robust.tau,
        "robust_ensemble_fidelity": comp.robust_fidelity,
    }
    print(f"optimal F = {comp.optimal_fidelity:.8f} at {comp.optimal.tau:g} us; "
          f"robust ensemble F = {comp.robust_fidelity:.8f} at {comp.robust.tau:g} us")
    files = ["waveforms/optimal.txt", "waveforms/robust.txt"]
    files += sorted(p.name for p in out.glob("scan_*.csv"))
    return {"results": res, "tables": ["robust_comparison.csv"], "files": files}


def cmd_scan(cfg, out: Path, args) -> dict:
    wf = load_waveform(cfg["waveform"]["file"])
    axis = Axis(cfg["scan"]["axis"])
    grid = _grid(cfg["scan"]["grid"], "scan.grid")
    problem = ControlProblem(_system(cfg), wf.n_segments, wf.tau)
    try:
        curve = sensitivity_scan(
            wf, problem, axis, grid, _gamma_r(cfg), cfg["ensemble"]["track_resonance"]
        )
    except ValueError as exc:
        raise _invalid("scan.grid", str(exc)) from None
    curve.to_csv(out / "scan.csv")
    print(f"scan over {axis.value}: {grid.size} points -> scan.csv")
    return {"results": {"points": int(grid.size)}, "tables": ["scan.csv"]}


HANDLERS = {
    "dress": cmd_dress,
    "optimize": cmd_optimize,
    "qsl": cmd_qsl,
    "sweep-detuning": cmd_sweep_detuning,
    "sweep-surface": cmd_sweep_surface,
    "sweep-optical": cmd_sweep_optical,
    "robust": cmd_robust,
    "scan": cmd_scan,
}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def run(cfg: dict, out: Path, args) -> dict:
    """Execute a resolved config and write ``manifest.json``."""
    out.mkdir(parents=True, exist_ok=True)
    err = out / "error.json"
    if err.exists():
        err.unlink()
    outcome = HANDLERS[cfg["command"]](cfg, out, args)
    manifest = {
        "tool": "spinflip",
        "version": __version__,
        "command": cfg["command"],
        "seed": cfg["seed"],
        "config": cfg,
        "results": outcome.get("results", {}),
        "tables": outcome.get("tables", []),
        "files": outcome.get("files", []),
    }
    (out / "manifest.json").write_text(
        json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n"
    )
    return manifest


def export(results_dir, fmt: str = "csv") -> Path:
    """Merge every table listed by manifests under ``results_dir``.

    Rows are de-duplicated and sorted, so re-exporting is byte-identical.
    """
    root = Path(results_dir)
    if fmt not in ("csv", "json"):
        raise CliError("CONFIG_INVALID", f"unknown export format {fmt!r}", "format")
    manifests = sorted(root.rglob("manifest.json")) if root.is_dir() else []
    tables = []
    for m in manifests:
        data = json.loads(m.read_text())
        for rel in data.get("tables", []):
            tables.append(Table.read_csv(m.parent / rel))
    if not tables:
        raise CliError("EMPTY_RESULTS", f"no result tables under {root}")
    columns = tables[0].columns
    for t in tables[1:]:
        if t.columns != columns:
            raise CliError(
                "MIXED_SCHEMAS",
                f"tables disagree on columns: {list(columns)} vs {list(t.columns)}",
            )
    rows = sorted(set(r for t in tables for r in t.rows), key=lambda r: tuple(map(str, r)))
    params = {"sources": [str(m.parent.relative_to(root)) for m in manifests]}
    merged = Table("export", columns, rows, params)
    target = root / f"export.{fmt}"
    if fmt == "csv":
        merged.to_csv(target)
    else:
        payload = {"columns": list(columns), "rows": [list(r) for r in rows], "params": params}
        target.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
    return target


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinflip", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--out", default=f"results/{name}", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument(
            "--workers", type=int, default=os.cpu_count() or 1, help="worker processes"
        )
        p.add_argument("--resume", action="store_true", help="reuse checkpointed points")
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("export")
    p.add_argument("results_dir")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(exc: CliError, out: Path | None) -> int:
    rec = exc.record()
    print(json.dumps(rec), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(json.dumps(rec, indent=2) + "\n")
        except OSError:
            pass
    return 2 if exc.code == "CONFIG_INVALID" else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "export":
        try:
            target = export(args.results_dir, args.format)
        except CliError as exc:
            return _fail(exc, None)
        print(target)
        return 0
    out = Path(args.out)
    try:
        if args.workers < 1:
            raise _invalid("workers", "must be at least 1")
        cfg = resolve_config(load_config(args.config), args.command, args.seed)
        run(cfg, out, args)
    except CliError as exc:
        return _fail(exc, out)
    except BracketFailedError as exc:
        return _fail(CliError("BRACKET_FAILED", str(exc)), out)
    except Exception as exc:  # reported, not swallowed
        log.debug("pipeline failure", exc_info=True)
        return _fail(CliError("PIPELINE_ERROR", f"{type(exc).__name__}: {exc}"), out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
