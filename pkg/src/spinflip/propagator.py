"""Piecewise-constant phase waveforms and exact segment propagation.

Each segment propagator is ``exp(-i H(xi_k) dt)``.  Because the drive phase
enters as ``H(xi) = Z H(0) Z^dagger`` with ``Z = exp(i xi n)`` (``n`` counts
phase-carrying excitations), every segment is an elementwise phase rotation
of one reference exponential, ``U(xi)_jk = U(0)_jk exp(i xi (n_j - n_k))``.
The reference exponential is obtained from an eigendecomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.integrate
import scipy.linalg

from .hamiltonian import GateSystem

DEFAULT_SUBSTEPS = 32
TRAJECTORY_STATES = ("01", "10", "11")


class DimensionMismatchError(ValueError):
    pass


class MissingTrajectoryError(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class PhaseWaveform:
    """``N`` piecewise-constant phases over total duration ``tau`` (us)."""

    phases: np.ndarray
    tau: float

    def __post_init__(self):
        phases = np.asarray(self.phases, dtype=float).reshape(-1)
        if phases.size == 0:
            raise ValueError("waveform needs at least one segment")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"invalid tau: {self.tau!r}")
        if not np.all(np.isfinite(phases)):
            raise ValueError("phases must be finite")
        object.__setattr__(self, "phases", phases)

    @property
    def n_segments(self) -> int:
        return self.phases.size

    @property
    def dt(self) -> float:
        return self.tau / self.n_segments

    @classmethod
    def zeros(cls, n_segments: int, tau: float) -> "PhaseWaveform":
        return cls(np.zeros(n_segments), tau)

    def with_tau(self, tau: float) -> "PhaseWaveform":
        return PhaseWaveform(self.phases.copy(), tau)

    def resampled(self, n_segments: int) -> "PhaseWaveform":
        """Linear resampling in normalised time onto ``n_segments`` segments."""
        if n_segments == self.n_segments:
            return PhaseWaveform(self.phases.copy(), self.tau)
        old = (np.arange(self.n_segments) + 0.5) / self.n_segments
        new = (np.arange(n_segments) + 0.5) / n_segments
        unwrapped = np.unwrap(self.phases)
        return PhaseWaveform(np.interp(new, old, unwrapped), self.tau)

    def wrapped(self) -> np.ndarray:
        """Phases reduced to ``[-pi, pi)``."""
        return (self.phases + np.pi) % (2 * np.pi) - np.pi

    def split(self, k: int) -> tuple["PhaseWaveform", "PhaseWaveform"]:
        """Split after segment ``k``, keeping the segment duration."""
        dt = self.dt
        return (
            PhaseWaveform(self.phases[:k], dt * k),
            PhaseWaveform(self.phases[k:], dt * (self.n_segments - k)),
        )


def save_waveform(wf: PhaseWaveform, path) -> None:
    """Write the plain-text waveform format (phases reduced mod 2pi)."""
    lines = [f"N={wf.n_segments}", f"tau_us={wf.tau:.17g}"]
    lines += [f"{x:.17g}" for x in wf.wrapped()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_waveform(path) -> PhaseWaveform:
    header = {}
    values = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line:
            key, val = line.split("=", 1)
            header[key.strip()] = val.strip()
        else:
            values.append(float(line))
    try:
        n = int(header["N"])
        tau = float(header["tau_us"])
    except KeyError as exc:
        raise ValueError(f"waveform file {path} missing header {exc}") from None
    if len(values) != n:
        raise ValueError(f"waveform file {path} declares N={n} but has {len(values)} phases")
    return PhaseWaveform(np.array(values), tau)


def expm_eig(h: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i h t)`` via eigendecomposition; Hermitian input uses ``eigh``.

    Falls back to Pade ``expm`` when the eigenvector basis is ill-conditioned.
    """
    if np.allclose(h, h.conj().T, atol=1e-13, rtol=0):
        w, v = np.linalg.eigh(h)
        return (v * np.exp(-1j * w * t)) @ v.conj().T
    w, v = scipy.linalg.eig(h)
    if np.linalg.cond(v) > 1e8:
        return scipy.linalg.expm(-1j * h * t)
    return (v * np.exp(-1j * w * t)) @ np.linalg.inv(v)


def phase_difference(system: GateSystem) -> np.ndarray:
    n = system.h0.excitation.astype(float)
    return n[:, None] - n[None, :]


def segment_propagators(system: GateSystem, wf: PhaseWaveform, dt: float | None = None):
    """Stack of per-segment propagators, shape ``(N, d, d)``."""
    step = wf.dt if dt is None else dt
    u0 = expm_eig(system.h0.matrix, step)
    d = phase_difference(system)
    return u0[None, :, :] * np.exp(1j * wf.phases[:, None, None] * d[None, :, :])


def _basis_state(system: GateSystem, state) -> np.ndarray:
    if isinstance(state, str):
        v = np.zeros(system.dim, dtype=complex)
        v[system.h0.index(state)] = 1.0
        return v
    v = np.asarray(state, dtype=complex)
    if v.shape != (system.dim,):
        raise DimensionMismatchError(
            f"state of shape {v.shape} does not match system dimension {system.dim}"
        )
    return v


@dataclass(eq=False)
class GateRecord:
    """Output of :func:`propagate`.

    ``trajectories`` maps an initial-state key to ``(times, populations)`` with
    populations of shape ``(len(times), dim)``.
    """

    system: GateSystem
    waveform: PhaseWaveform
    u_total: np.ndarray
    u_segments: np.ndarray
    trajectories: dict = field(default_factory=dict)
    norms: dict = field(default_factory=dict)
    substeps: int = DEFAULT_SUBSTEPS
    t_r: float = math.nan

    @property
    def gamma_r(self) -> float:
        return self.system.gamma_r

    def computational_block(self) -> np.ndarray:
        idx = self.system.computational_indices()
        return self.u_total[np.ix_(idx, idx)]

    def rydberg_populations(self, key: str) -> tuple[np.ndarray, np.ndarray]:
        times, pops = self.trajectories[key]
        return times, pops @ self.system.h0.rydberg.astype(float)


def _trajectory(system, wf, psi0, substeps):
    dt = wf.dt / substeps
    sub = segment_propagators(system, wf, dt)
    times = np.linspace(0.0, wf.tau, wf.n_segments * substeps + 1)
    pops = np.empty((times.size, system.dim))
    psi = psi0.copy()
    pops[0] = np.abs(psi) ** 2
    i = 1
    for k in range(wf.n_segments):
        uk = sub[k]
        for _ in range(substeps):
            psi = uk @ psi
            pops[i] = np.abs(psi) ** 2
            i += 1
    return times, pops


def propagate(
    system: GateSystem,
    wf: PhaseWaveform,
    initial_states=TRAJECTORY_STATES,
    substeps: int = DEFAULT_SUBSTEPS,
) -> GateRecord:
    """Propagate the waveform and sample population trajectories.

    ``initial_states`` are basis labels or explicit state vectors (keyed by
    position).  When ``|01>, |10>, |11>`` are all present the Rydberg time is
    filled in.
    """
    segs = segment_propagators(system, wf)
    u = np.eye(system.dim, dtype=complex)
    for k in range(wf.n_segments):
        u = segs[k] @ u
    record = GateRecord(system, wf, u, segs, substeps=substeps)
    for i, state in enumerate(initial_states):
        key = state if isinstance(state, str) else i
        psi0 = _basis_state(system, state)
        times, pops = _trajectory(system, wf, psi0, substeps)
        record.trajectories[key] = (times, pops)
        record.norms[key] = float(np.sqrt(pops[-1].sum()))
    if all(k in record.trajectories for k in TRAJECTORY_STATES):
        record.t_r = rydberg_time(record)
    return record


def state_rydberg_time(record: GateRecord, key: str) -> float:
    times, ryd = record.rydberg_populations(key)
    return float(scipy.integrate.trapezoid(ryd, times))


def rydberg_time(record: GateRecord) -> float:
    """``(T_01 + T_10 + T_11) / 4`` by trapezoid quadrature of the trajectories."""
    missing = [k for k in TRAJECTORY_STATES if k not in record.trajectories]
    if missing:
        raise MissingTrajectoryError(f"record lacks trajectories for {missing}")
    return sum(state_rydberg_time(record, k) for k in TRAJECTORY_STATES) / 4


def converged_rydberg_time(
    system: GateSystem,
    wf: PhaseWaveform,
    substeps: int = DEFAULT_SUBSTEPS,
    rtol: float = 1e-4,
    max_substeps: int = 4096,
) -> tuple[float, int]:
    """Double the sub-sampling until ``T_r`` changes by less than ``rtol``."""
    prev = rydberg_time(propagate(system, wf, substeps=substeps))
    while substeps < max_substeps:
        substeps *= 2
        cur = rydberg_time(propagate(system, wf, substeps=substeps))
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur, substeps
        prev = cur
    return prev, substeps
