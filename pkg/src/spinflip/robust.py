"""Ensemble-robust waveforms, sensitivity scans and motional J uncertainty.

Perturbed systems are rebuilt from the ``DressingParams`` stored on a
microwave :class:`~spinflip.hamiltonian.GateSystem`.  By default every atom's
microwave stays resonant with its own (perturbed) dressed state, so a
perturbation acts only through the two-atom quantities ``J``, ``Omega'`` and
the dressed couplings.  Set ``track_resonance=False`` to hold the microwave at
the nominal resonance instead, which adds the one-atom light-shift error.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dressed import (
    DEGENERACY_TOL,
    TWO_PI,
    Branch,
    DegenerateBranchError,
    DressingParams,
    default_branch,
    single_light_shift,
)
from .grape import ControlProblem, OptimizeOptions, optimize_waveform, problem_fidelity
from .hamiltonian import GateSystem, MotionalParams, microwave_system, motional_hamiltonian
from .metrics import cz_fidelity
from .propagator import PhaseWaveform, propagate

WEIGHT_TOL = 1e-12
SCAN_COLUMNS = ("axis_value", "fidelity_unitary", "fidelity_decay", "t_r_us")


class Axis(enum.Enum):
    OMEGA_L_COMMON = "omega_L_common"
    DELTA_L1 = "delta_L1"


@dataclass(frozen=True)
class Perturbation:
    """Multiplicative Rabi factors and additive detuning offsets (rad/us) per atom."""

    omega_factor1: float = 1.0
    omega_factor2: float = 1.0
    delta_offset1: float = 0.0
    delta_offset2: float = 0.0

    def __post_init__(self):
        for name in ("omega_factor1", "omega_factor2"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"invalid {name}: {v!r}")

    @classmethod
    def common(cls, factor: float) -> "Perturbation":
        return cls(factor, factor)

    @property
    def is_identity(self) -> bool:
        return self == Perturbation()

    def apply(self, params: DressingParams) -> tuple[DressingParams, DressingParams]:
        # keep the nominal branch so a perturbation cannot flip it
        branch = params.resolved_branch

        def one(factor, offset):
            return params.replace(
                omega_L=params.omega_L * factor,
                delta_L=params.delta_L + offset,
                branch=branch,
            )

        return one(self.omega_factor1, self.delta_offset1), one(
            self.omega_factor2, self.delta_offset2
        )


@dataclass(frozen=True)
class EnsembleSpec:
    """Weighted parameter perturbations defining an average fidelity."""

    members: tuple[tuple[Perturbation, float], ...]
    track_resonance: bool = True

    def __post_init__(self):
        members = tuple((p, float(w)) for p, w in self.members)
        if not members:
            raise ValueError("ensemble needs at least one member")
        if any(not w > 0 for _, w in members):
            raise ValueError("ensemble weights must be positive")
        total = sum(w for _, w in members)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"ensemble weights sum to {total!r}, not 1")
        object.__setattr__(self, "members", members)

    @classmethod
    def nominal(cls) -> "EnsembleSpec":
        return cls(((Perturbation(), 1.0),))

    @classmethod
    def common_omega(cls, factors, weights, track_resonance: bool = True) -> "EnsembleSpec":
        return cls(
            tuple((Perturbation.common(f), w) for f, w in zip(factors, weights)),
            track_resonance,
        )

    @classmethod
    def default(cls) -> "EnsembleSpec":
        """Half weight at nominal, a quarter each at +-2% common Rabi frequency."""
        return cls.common_omega((1.0, 1.02, 0.98), (0.5, 0.25, 0.25))


def _params_of(system: GateSystem) -> DressingParams:
    try:
        return system.meta["params"]
    except KeyError:
        raise ValueError("perturbations need a microwave system built from DressingParams") from None


def perturbed_system(
    system: GateSystem,
    pert: Perturbation,
    track_resonance: bool = True,
    gamma_r: float | None = None,
) -> GateSystem:
    """Rebuild ``system`` with ``pert`` applied to its nominal parameters."""
    params = _params_of(system)
    g = system.gamma_r if gamma_r is None else gamma_r
    p1, p2 = pert.apply(params)
    tuned = None if track_resonance else params
    return microwave_system(p1, p2, tuned_to=tuned, gamma_r=g)


def ensemble_problem(spec: EnsembleSpec, problem: ControlProblem) -> ControlProblem:
    members = tuple(
        (perturbed_system(problem.system, p, spec.track_resonance), w) for p, w in spec.members
    )
    return replace(problem, ensemble=members)


def ensemble_fidelity(spec: EnsembleSpec, problem: ControlProblem, wf: PhaseWaveform) -> float:
    """Weighted CZ fidelity of ``wf`` over the ensemble."""
    return problem_fidelity(ensemble_problem(spec, problem), wf)


def optimize_robust(
    spec: EnsembleSpec,
    problem: ControlProblem,
    init: PhaseWaveform | None = None,
    opts: OptimizeOptions = OptimizeOptions(),
    stream: tuple = (),
) -> tuple[PhaseWaveform, float]:
    """GRAPE on the ensemble-averaged fidelity.

    Returns the best waveform and its ensemble fidelity; non-convergence is
    logged by :func:`optimize_waveform`, not raised.
    """
    res = optimize_waveform(ensemble_problem(spec, problem), init, opts, stream)
    return res.waveform, res.fidelity


@dataclass(eq=False)
class SensitivityCurve:
    """Fixed-waveform fidelity along one perturbation axis.

    ``values`` are common Rabi factors for ``OMEGA_L_COMMON`` and atom-1
    detuning offsets in MHz for ``DELTA_L1``.
    """

    axis: Axis
    values: np.ndarray
    fidelity_unitary: np.ndarray
    fidelity_decay: np.ndarray
    t_r_us: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.fidelity_unitary = np.asarray(self.fidelity_unitary, dtype=float)
        self.fidelity_decay = np.asarray(self.fidelity_decay, dtype=float)
        self.t_r_us = np.asarray(self.t_r_us, dtype=float)
        if self.values.size > 1 and not np.all(np.diff(self.values) > 0):
            raise ValueError("sensitivity grid must be strictly increasing")

    def at(self, value: float) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.values - value)))
        return float(self.fidelity_unitary[i]), float(self.fidelity_decay[i])

    def rows(self):
        for row in zip(self.values, self.fidelity_unitary, self.fidelity_decay, self.t_r_us):
            yield tuple(float(x) for x in row)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            params = {"axis": self.axis.value, **self.meta}
            fh.write("# params: " + json.dumps(params, sort_keys=True) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SCAN_COLUMNS)
            for row in self.rows():
                w.writerow([repr(x) for x in row])


def _perturbation_for(axis: Axis, value: float) -> Perturbation:
    if axis is Axis.OMEGA_L_COMMON:
        return Perturbation.common(value)
    return Perturbation(delta_offset1=TWO_PI * value)


def gate_point(
    system: GateSystem, wf: PhaseWaveform, gamma_r: float
) -> tuple[float, float, float]:
    """``(F_unitary, F_decay, T_r)`` of one waveform on one system.

    ``F_decay`` uses the non-Hermitian propagator with rate ``gamma_r``.
    """
    clean = system.with_decay(0.0)
    rec = propagate(clean, wf)
    f_u = cz_fidelity(rec).fidelity
    if gamma_r > 0:
        f_d = cz_fidelity(propagate(system.with_decay(gamma_r), wf, initial_states=())).fidelity
    else:
        f_d = f_u
    return f_u, f_d, rec.t_r


def sensitivity_scan(
    wf: PhaseWaveform,
    problem: ControlProblem,
    axis: Axis,
    grid,
    gamma_r: float | None = None,
    track_resonance: bool = True,
) -> SensitivityCurve:
    """Re-propagate a fixed waveform along a perturbation axis.

    ``gamma_r`` defaults to the decay rate of the nominal parameters.
    """
    axis = Axis(axis)
    grid = np.asarray(grid, dtype=float)
    params = _params_of(problem.system)
    if axis is Axis.OMEGA_L_COMMON and np.any(np.abs(grid - 1) > 0.1 + 1e-12):
        raise ValueError("Rabi-factor grid must stay within +-10%")
    if axis is Axis.DELTA_L1 and np.any(
        np.abs(TWO_PI * grid) > params.omega_L / 2 * (1 + 1e-12)
    ):
        raise ValueError("detuning-offset grid must stay within +-Omega_L/2")
    g = params.gamma_r if gamma_r is None else gamma_r
    out = np.empty((grid.size, 3))
    for i, v in enumerate(grid):
        pert = _perturbation_for(axis, float(v))
        sys_i = perturbed_system(problem.system, pert, track_resonance, gamma_r=0.0)
        out[i] = gate_point(sys_i, wf, g)
    return SensitivityCurve(
        axis,
        grid,
        out[:, 0],
        out[:, 1],
        out[:, 2],
        meta={"gamma_r": g, "track_resonance": track_resonance, "tau_us": wf.tau},
    )


def _gg_energy(mp: MotionalParams, branch: Branch) -> float:
    h = motional_hamiltonian(mp).matrix
    vals, vecs = np.linalg.eigh(h)
    weight = np.abs(vecs[0])
    best = np.max(weight)
    tied = np.flatnonzero(weight > best - DEGENERACY_TOL)
    if tied.size == 1:
        return float(vals[tied[0]])
    # a symmetric tie (e.g. resonant dressing) is resolved by energy order
    if tied.size == 2:
        return float(vals[tied[0] if branch is Branch.LOWER else tied[-1]])
    raise DegenerateBranchError("ground-pair dressed state is ambiguous")


def perturbed_entangling_energy(mp: MotionalParams, branch: Branch | None = None) -> float:
    """``J'`` from the motional model: the dressed ``|gg>`` energy minus the two
    one-atom light shifts at the per-atom Rabi frequencies and detunings."""
    branch = default_branch(mp.delta) if branch is None else branch
    d1, d2 = mp.atom_detunings()
    e_pair = _gg_energy(mp, branch)
    return (
        e_pair
        - single_light_shift(mp.omega_L1, d1, branch)
        - single_light_shift(mp.omega_L2, d2, branch)
    )


def sample_momenta(
    n: int, sigma_rel: float, sigma_com: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean Gaussian relative and centre-of-mass momenta.

    No temperature default is provided; the widths are the caller's choice.
    """
    if sigma_rel < 0 or sigma_com < 0:
        raise ValueError("momentum widths must be non-negative")
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    return rng.normal(0.0, sigma_rel, n), rng.normal(0.0, sigma_com, n)


def thermal_j_samples(
    mp: MotionalParams, sigma_rel: float, sigma_com: float, n: int, seed: int
) -> np.ndarray:
    """``J'`` for ``n`` momentum draws around ``mp``."""
    p_rel, p_com = sample_momenta(n, sigma_rel, sigma_com, seed)
    return np.array(
        [
            perturbed_entangling_energy(replace(mp, p_rel=mp.p_rel + a, p_com=mp.p_com + b))
            for a, b in zip(p_rel, p_com)
        ]
    )
