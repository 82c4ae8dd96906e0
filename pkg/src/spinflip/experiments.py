"""Desk-scale pipelines that regenerate the gate-time and fidelity tables.

Every pipeline evaluates independent grid points, optionally in a process
pool, checkpoints each finished point as JSON and writes one CSV in grid
order.  Point ``i`` seeds its optimiser restarts with ``(opts.seed, i, ...)``,
so results do not depend on the number of workers or on resumption.

Output units: frequencies in MHz (ordinary, not angular), times in us, plus
dimensionless columns such as ``tau_star_omega_L``.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .dressed import (
    TWO_PI,
    DressingParams,
    detuning_for_entangling_energy,
    dress_pair,
    dress_single,
    entangling_energy,
    strong_dressing_asymptotics,
    weak_dressing_asymptotics,
)
from .grape import (
    DEFAULT_EPSILON,
    DEFAULT_SEGMENTS,
    ControlProblem,
    OptimizeOptions,
    optimize_waveform,
    qsl_search,
)
from .hamiltonian import microwave_system, optical_system
from .metrics import cz_fidelity
from .propagator import PhaseWaveform, load_waveform, propagate, save_waveform
from .robust import (
    Axis,
    EnsembleSpec,
    SensitivityCurve,
    ensemble_fidelity,
    optimize_robust,
    sensitivity_scan,
)

log = logging.getLogger(__name__)

WDR_TAU_FACTOR = 1.11
OK = "ok"


@dataclass(frozen=True)
class GridAxis:
    name: str
    min: float
    max: float
    count: int
    scale: str = "linear"

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"axis {self.name}: count must be at least 2")
        if not self.min < self.max:
            raise ValueError(f"axis {self.name}: min must be below max")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"axis {self.name}: scale must be linear or log")
        if self.scale == "log" and self.min <= 0:
            raise ValueError(f"axis {self.name}: log scale needs a positive min")

    def values(self) -> np.ndarray:
        if self.scale == "log":
            return np.geomspace(self.min, self.max, self.count)
        return np.linspace(self.min, self.max, self.count)


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian product of axes in row-major order (last axis fastest)."""

    axes: tuple[GridAxis, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.count for a in self.axes)

    def points(self) -> list[dict]:
        names = [a.name for a in self.axes]
        return [
            dict(zip(names, map(float, combo)))
            for combo in itertools.product(*(a.values() for a in self.axes))
        ]


@dataclass(eq=False)
class Table:
    """Named columns with rows in grid order and a parameter manifest."""

    name: str
    columns: tuple[str, ...]
    rows: list = field(default_factory=list)
    params: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self, path) -> None:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            fh.write("# params: " + json.dumps(self.params, sort_keys=True) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_fmt(x) for x in row])

    @classmethod
    def read_csv(cls, path) -> "Table":
        path = Path(path)
        params = {}
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("# params:"):
                params = json.loads(line.split(":", 1)[1])
            elif line and not line.startswith("#"):
                body.append(line)
        reader = csv.reader(body)
        columns = tuple(next(reader))
        rows = [tuple(_parse(x) for x in r) for r in reader]
        return cls(path.stem, columns, rows, params)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _parse(x: str):
    try:
        return float(x)
    except ValueError:
        return x


class PointStore:
    """One JSON file per finished grid point."""

    def __init__(self, root, name: str):
        self.dir = Path(root) / "points" / name
        self.dir.mkdir(parents=True, exist_ok=True)

    def _path(self, i: int) -> Path:
        return self.dir / f"{i:05d}.json"

    def get(self, i: int):
        p = self._path(i)
        if not p.exists():
            return None
        return json.loads(p.read_text())

    def put(self, i: int, result: dict) -> None:
        tmp = self._path(i).with_suffix(".tmp")
        tmp.write_text(json.dumps(result, sort_keys=True))
        os.replace(tmp, self._path(i))

    def clear(self) -> None:
        for p in self.dir.glob("*.json"):
            p.unlink()


_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def map_points(fn, tasks: list[dict], workers: int = 1, store: PointStore | None = None,
               resume: bool = False) -> list[dict]:
    """Evaluate ``fn`` on every task, results returned in task order.

    With a ``store`` every result is checkpointed; ``resume`` reuses stored
    results instead of recomputing them.
    """
    results: list = [None] * len(tasks)
    if store is not None:
        if resume:
            for i in range(len(tasks)):
                results[i] = store.get(i)
        else:
            store.clear()
    todo = [i for i, r in enumerate(results) if r is None]

    def done(i, r):
        results[i] = r
        if store is not None:
            store.put(i, r)

    if workers <= 1 or len(todo) <= 1:
        for i in todo:
            done(i, fn(tasks[i]))
        return results
    # fresh interpreters with single-threaded BLAS: the matrices are tiny and
    # threaded BLAS across workers oversubscribes the cores
    saved = {k: os.environ.get(k) for k in _THREAD_VARS}
    os.environ.update({k: "1" for k in _THREAD_VARS})
    try:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = {pool.submit(fn, tasks[i]): i for i in todo}
            for fut in as_completed(futures):
                done(futures[fut], fut.result())
    finally:
        for k, v in saved.items():
            if v is None:
                os.environ.pop(k, None)
            else:
                os.environ[k] = v
    return results


def _opts_dict(opts: OptimizeOptions) -> dict:
    return asdict(opts)


def _qsl_point(system, task, guess: float):
    """QSL search from a guessed duration, then a polish at ``tau_star``."""
    opts = OptimizeOptions(**task["opts"])
    problem = ControlProblem(system, task["n_segments"], guess)
    q = qsl_search(
        problem,
        (0.8 * guess, guess),
        task["epsilon"],
        opts,
        stream=(task["index"],),
    )
    polished = optimize_waveform(
        problem.with_tau(q.tau_star), q.waveform, replace(opts, restarts=1)
    )
    wf = polished.waveform if polished.fidelity >= q.fidelity else q.waveform
    return q, wf


def _waveform_json(wf: PhaseWaveform) -> dict:
    return {"tau": wf.tau, "phases": [float(x) for x in wf.phases]}


def _waveform_from_json(d) -> PhaseWaveform:
    return PhaseWaveform(np.array(d["phases"]), d["tau"])


def _failure(task, exc) -> dict:
    log.warning("point %d failed: %s", task["index"], exc)
    return {"status": f"{type(exc).__name__}: {exc}", "waveform": None}


def _microwave_tau_guess(j: float, omega_mw: float) -> float:
    return max(1.25 * TWO_PI / omega_mw, 1.5 * math.pi / max(abs(j), 1e-12))


DETUNING_COLUMNS = (
    "delta_L_mhz",
    "j_mhz",
    "omega_mw_eff_mhz",
    "omega_mw_eff_prime_mhz",
    "gamma_a_over_gamma_r",
    "gamma_aa_over_gamma_r",
    "tau_star_us",
    "fidelity_unitary",
    "t_r_us",
    "fidelity_r",
    "status",
)


def _detuning_point(task: dict) -> dict:
    p = DressingParams(
        omega_L=task["omega_L"],
        delta_L=task["delta_L"],
        omega_mw=task["omega_mw"],
        gamma_r=task["gamma_r"],
    )
    atom, pair = dress_single(p), dress_pair(p)
    row = {
        "delta_L_mhz": p.delta_L / TWO_PI,
        "j_mhz": pair.j / TWO_PI,
        "omega_mw_eff_mhz": atom.omega_mw_eff / TWO_PI,
        "omega_mw_eff_prime_mhz": pair.omega_mw_eff_prime / TWO_PI,
        "gamma_a_over_gamma_r": atom.sin_half_theta**2,
        "gamma_aa_over_gamma_r": pair.beta**2 + 2 * pair.gamma**2,
    }
    system = microwave_system(p, gamma_r=0.0)
    try:
        q, wf = _qsl_point(system, task, _microwave_tau_guess(pair.j, p.omega_mw))
    except Exception as exc:  # recorded per point
        return {**row, **_failure(task, exc)}
    rec = propagate(system, wf)
    f_u = cz_fidelity(rec).fidelity
    row.update(
        tau_star_us=q.tau_star,
        fidelity_unitary=f_u,
        t_r_us=rec.t_r,
        fidelity_r=f_u * (1 - p.gamma_r * rec.t_r),
        status=OK,
        waveform=_waveform_json(wf),
    )
    return row


def _base_task(index, n_segments, epsilon, opts):
    return {"index": index, "n_segments": n_segments, "epsilon": epsilon, "opts": _opts_dict(opts)}


def _finish(name, columns, results, params, out_dir) -> Table:
    rows = [tuple(r.get(c, math.nan) for c in columns) for r in results]
    table = Table(name, columns, rows, params)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table.to_csv(out / f"{name}.csv")
        wdir = out / "waveforms"
        for i, r in enumerate(results):
            if r.get("waveform"):
                wdir.mkdir(exist_ok=True)
                save_waveform(_waveform_from_json(r["waveform"]), wdir / f"{name}_{i:03d}.txt")
    return table


def default_detuning_grid() -> np.ndarray:
    """25 points, ``Delta_L / 2pi`` from -12 to 0 MHz."""
    return np.linspace(-12.0, 0.0, 25)


def run_detuning_sweep(
    omega_L: float,
    omega_mw: float,
    delta_grid,
    gamma_r: float,
    *,
    n_segments: int = DEFAULT_SEGMENTS,
    epsilon: float = DEFAULT_EPSILON,
    opts: OptimizeOptions = OptimizeOptions(),
    out_dir=None,
    workers: int = 1,
    resume: bool = False,
) -> Table:
    """Dressed quantities, QSL and decay-limited fidelity versus laser detuning.

    Frequencies are angular (rad/us) on input; ``delta_grid`` too.
    ``fidelity_r`` is ``F * (1 - gamma_r T_r)`` for the waveform found at
    ``tau_star``.
    """
    tasks = [
        {
            **_base_task(i, n_segments, epsilon, opts),
            "omega_L": float(omega_L),
            "omega_mw": float(omega_mw),
            "delta_L": float(d),
            "gamma_r": float(gamma_r),
        }
        for i, d in enumerate(np.asarray(delta_grid, dtype=float))
    ]
    store = PointStore(out_dir, "detuning_sweep") if out_dir is not None else None
    results = map_points(_detuning_point, tasks, workers, store, resume)
    params = {
        "omega_L_mhz": omega_L / TWO_PI,
        "omega_mw_mhz": omega_mw / TWO_PI,
        "gamma_r_per_us": gamma_r,
        "n_segments": n_segments,
        "epsilon": epsilon,
        "seed": opts.seed,
    }
    return _finish("detuning_sweep", DETUNING_COLUMNS, results, params, out_dir)


SURFACE_COLUMNS = (
    "ratio",
    "delta_over_omega_L",
    "omega_L_mhz",
    "delta_L_mhz",
    "j_over_omega_mw",
    "tau_star_us",
    "tau_star_omega_mw_over_2pi",
    "t_r_us",
    "j_contour_delta_over_omega_L",
    "delta_wdr_over_omega_L",
    "tau_wdr_us",
    "t_r_wdr_us",
    "tau_sdr_us",
    "t_r_sdr_us",
    "status",
)


def _surface_point(task: dict) -> dict:
    omega_mw = task["omega_mw"]
    omega_L = task["ratio"] * omega_mw
    delta_L = task["delta_over_omega_L"] * omega_L
    p = DressingParams(omega_L=omega_L, delta_L=delta_L, omega_mw=omega_mw)
    j = entangling_energy(p)
    d_wdr, t_wdr = weak_dressing_asymptotics(omega_L, omega_mw)
    j_max, t_sdr, tau_sdr = strong_dressing_asymptotics(omega_L)
    contour = detuning_for_entangling_energy(omega_L, omega_mw)
    row = {
        "ratio": task["ratio"],
        "delta_over_omega_L": task["delta_over_omega_L"],
        "omega_L_mhz": omega_L / TWO_PI,
        "delta_L_mhz": delta_L / TWO_PI,
        "j_over_omega_mw": j / omega_mw,
        "j_contour_delta_over_omega_L": contour / omega_L,
        # the lower branch is dressed from below, hence the sign
        "delta_wdr_over_omega_L": -d_wdr / omega_L,
        "tau_wdr_us": WDR_TAU_FACTOR * TWO_PI / omega_mw,
        "t_r_wdr_us": t_wdr,
        "tau_sdr_us": tau_sdr,
        "t_r_sdr_us": t_sdr,
    }
    system = microwave_system(p, gamma_r=0.0)
    try:
        q, wf = _qsl_point(system, task, _microwave_tau_guess(j, omega_mw))
    except Exception as exc:
        return {**row, **_failure(task, exc)}
    rec = propagate(system, wf)
    row.update(
        tau_star_us=q.tau_star,
        tau_star_omega_mw_over_2pi=q.tau_star * omega_mw / TWO_PI,
        t_r_us=rec.t_r,
        status=OK,
        waveform=_waveform_json(wf),
    )
    return row


def default_surface_grid() -> SweepGrid:
    """8 x 8: ``Omega_L / Omega_mw`` log-spaced over [1, 30] and
    ``Delta_L / Omega_L`` linear over [-1.75, 0]."""
    return SweepGrid(
        (
            GridAxis("ratio", 1.0, 30.0, 8, "log"),
            GridAxis("delta_over_omega_L", -1.75, 0.0, 8),
        )
    )


def run_qsl_surface(
    ratio_grid,
    detuning_grid,
    *,
    omega_mw: float = TWO_PI,
    n_segments: int = DEFAULT_SEGMENTS,
    epsilon: float = DEFAULT_EPSILON,
    opts: OptimizeOptions = OptimizeOptions(),
    out_dir=None,
    workers: int = 1,
    resume: bool = False,
) -> Table:
    """``tau_star`` and ``T_r`` over ``Omega_L / Omega_mw`` x ``Delta_L / Omega_L``.

    Rows are ratio-major.  Each row also carries the weak- and
    strong-dressing asymptotes and the detuning of the ``J = Omega_mw``
    contour (NaN where ``J_max < Omega_mw``).
    """
    ratios = np.asarray(ratio_grid, dtype=float)
    deltas = np.asarray(detuning_grid, dtype=float)
    tasks = [
        {
            **_base_task(i, n_segments, epsilon, opts),
            "omega_mw": float(omega_mw),
            "ratio": float(r),
            "delta_over_omega_L": float(d),
        }
        for i, (r, d) in enumerate(itertools.product(ratios, deltas))
    ]
    store = PointStore(out_dir, "qsl_surface") if out_dir is not None else None
    results = map_points(_surface_point, tasks, workers, store, resume)
    params = {
        "omega_mw_mhz": omega_mw / TWO_PI,
        "n_ratio": int(ratios.size),
        "n_detuning": int(deltas.size),
        "n_segments": n_segments,
        "epsilon": epsilon,
        "seed": opts.seed,
    }
    return _finish("qsl_surface", SURFACE_COLUMNS, results, params, out_dir)


def surface_valley(table: Table) -> list[tuple[float, float, float]]:
    """Per ratio: ``(ratio, delta_over_omega_L at min tau_star, J-contour detuning)``."""
    ratio = table.column("ratio")
    delta = table.column("delta_over_omega_L")
    tau = table.column("tau_star_us").astype(float)
    contour = table.column("j_contour_delta_over_omega_L").astype(float)
    out = []
    for r in np.unique(ratio):
        m = ratio == r
        tau_r = np.where(np.isnan(tau[m]), np.inf, tau[m])
        i = int(np.argmin(tau_r))
        out.append((float(r), float(delta[m][i]), float(contour[m][i])))
    return out


OPTICAL_COLUMNS = (
    "vrr_over_omega_L",
    "tau_star_us",
    "tau_star_omega_L",
    "pi_over_vrr_omega_L",
    "t_r_us",
    "status",
)


def _optical_point(task: dict) -> dict:
    omega_L = task["omega_L"]
    ratio = task["vrr_over_omega_L"]
    row = {
        "vrr_over_omega_L": ratio,
        "pi_over_vrr_omega_L": math.pi / ratio,
    }
    system = optical_system(omega_L, 0.0, ratio * omega_L)
    guess = max(7.6, 1.25 * math.pi / ratio) / omega_L
    try:
        q, wf = _qsl_point(system, task, guess)
    except Exception as exc:
        return {**row, **_failure(task, exc)}
    rec = propagate(system, wf)
    row.update(
        tau_star_us=q.tau_star,
        tau_star_omega_L=q.tau_star * omega_L,
        t_r_us=rec.t_r,
        status=OK,
        waveform=_waveform_json(wf),
    )
    return row


def default_optical_grid() -> np.ndarray:
    """15 points over ``V_rr / Omega_L`` in [0.1, 100].

    Quarter-decade log spacing plus 0.2 and 0.5, so the weak-blockade end is
    sampled where the gate time approaches ``pi / V_rr``.
    """
    return np.unique(np.concatenate([np.geomspace(0.1, 100.0, 13), [0.2, 0.5]]))


def run_optical_blockade_sweep(
    vrr_over_omega_grid,
    *,
    omega_L: float = TWO_PI,
    n_segments: int = DEFAULT_SEGMENTS,
    epsilon: float = DEFAULT_EPSILON,
    opts: OptimizeOptions = OptimizeOptions(),
    out_dir=None,
    workers: int = 1,
    resume: bool = False,
) -> Table:
    """Laser-phase CZ gate time versus blockade strength."""
    tasks = [
        {
            **_base_task(i, n_segments, epsilon, opts),
            "omega_L": float(omega_L),
            "vrr_over_omega_L": float(v),
        }
        for i, v in enumerate(np.asarray(vrr_over_omega_grid, dtype=float))
    ]
    store = PointStore(out_dir, "optical_sweep") if out_dir is not None else None
    results = map_points(_optical_point, tasks, workers, store, resume)
    params = {
        "omega_L_mhz": omega_L / TWO_PI,
        "n_segments": n_segments,
        "epsilon": epsilon,
        "seed": opts.seed,
    }
    return _finish("optical_sweep", OPTICAL_COLUMNS, results, params, out_dir)


ROBUST_COLUMNS = ("waveform", "axis", "axis_value", "fidelity_unitary", "fidelity_decay", "t_r_us")


@dataclass(eq=False)
class RobustComparison:
    """Optimal and robust waveforms with their sensitivity curves.

    ``curves`` is keyed by ``(label, axis)`` with labels ``"optimal"`` and
    ``"robust"``.
    """

    tau_star: float
    optimal: PhaseWaveform
    optimal_fidelity: float
    robust: PhaseWaveform
    robust_fidelity: float
    curves: dict
    table: Table


def default_omega_scan() -> np.ndarray:
    """Common Rabi factors 0.96..1.04 at 0.25% spacing."""
    return np.linspace(0.96, 1.04, 33)


def default_delta_scan() -> np.ndarray:
    """Atom-1 detuning offsets -1..1 MHz at 0.05 MHz spacing."""
    return np.linspace(-1.0, 1.0, 41)


def _load_or_run(path: Path | None, resume: bool, run):
    if path is not None and resume and path.exists():
        return load_waveform(path), None
    wf, f = run()
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_waveform(wf, path)
        # continue from the stored (wrapped) phases so resumed runs match bit for bit
        wf = load_waveform(path)
    return wf, f


def run_robust_comparison(
    problem: ControlProblem,
    spec: EnsembleSpec = EnsembleSpec.default(),
    *,
    tau_star: float | None = None,
    robust_tau: float | None = None,
    opts: OptimizeOptions = OptimizeOptions(),
    robust_opts: OptimizeOptions | None = None,
    omega_grid=None,
    delta_grid=None,
    gamma_r: float | None = None,
    out_dir=None,
    resume: bool = False,
) -> RobustComparison:
    """Non-robust optimum at ``problem.tau`` versus an ensemble-robust waveform.

    The robust gate runs at ``robust_tau``, by default ``1.5 * tau_star``;
    ``tau_star`` is found by a QSL search when not given.  Both waveforms
    are scanned over a common Rabi factor and an atom-1 detuning offset.
    """
    out = Path(out_dir) if out_dir is not None else None
    if tau_star is None:
        tau_star = qsl_search(problem, (0.8 * problem.tau, problem.tau), opts=opts).tau_star
    robust_tau = 1.5 * tau_star if robust_tau is None else robust_tau
    robust_opts = opts if robust_opts is None else robust_opts

    def run_optimal():
        res = optimize_waveform(problem, None, opts)
        return res.waveform, res.fidelity

    opt_wf, _ = _load_or_run(out and out / "waveforms" / "optimal.txt", resume, run_optimal)
    rob_problem = problem.with_tau(robust_tau)
    rob_wf, _ = _load_or_run(
        out and out / "waveforms" / "robust.txt",
        resume,
        lambda: optimize_robust(spec, rob_problem, None, robust_opts),
    )
    # fidelities recomputed from the stored waveforms so resumed runs agree
    opt_f = cz_fidelity(propagate(problem.system, opt_wf, initial_states=())).fidelity
    rob_f = ensemble_fidelity(spec, rob_problem, rob_wf)

    omega_grid = default_omega_scan() if omega_grid is None else omega_grid
    delta_grid = default_delta_scan() if delta_grid is None else delta_grid
    curves: dict = {}
    rows = []
    for label, wf in (("optimal", opt_wf), ("robust", rob_wf)):
        for axis, grid in ((Axis.OMEGA_L_COMMON, omega_grid), (Axis.DELTA_L1, delta_grid)):
            c = sensitivity_scan(
                wf, problem.with_tau(wf.tau), axis, grid, gamma_r, spec.track_resonance
            )
            curves[(label, axis)] = c
            rows += [(label, axis.value, *r) for r in c.rows()]
            if out is not None:
                c.to_csv(out / f"scan_{label}_{axis.value}.csv")
    params = {
        "tau_us": problem.tau,
        "tau_star_us": tau_star,
        "robust_tau_us": robust_tau,
        "seed": opts.seed,
        "ensemble": [[asdict(p), w] for p, w in spec.members],
        "track_resonance": spec.track_resonance,
    }
    table = Table("robust_comparison", ROBUST_COLUMNS, rows, params)
    if out is not None:
        table.to_csv(out / "robust_comparison.csv")
    return RobustComparison(tau_star, opt_wf, opt_f, rob_wf, rob_f, curves, table)


def plateau_width(curve: SensitivityCurve, threshold: float) -> float:
    """Width of the contiguous grid region around zero perturbation where the
    unitary fidelity stays at or above ``threshold``."""
    values = curve.values
    centre = 1.0 if curve.axis is Axis.OMEGA_L_COMMON else 0.0
    i0 = int(np.argmin(np.abs(values - centre)))
    ok = curve.fidelity_unitary >= threshold
    if not ok[i0]:
        return 0.0
    lo = hi = i0
    while lo > 0 and ok[lo - 1]:
        lo -= 1
    while hi < values.size - 1 and ok[hi + 1]:
        hi += 1
    return float(values[hi] - values[lo])
