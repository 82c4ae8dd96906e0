"""Computational-basis phases and CZ-class gate fidelities."""

from __future__ import annotations

import enum
import math
from typing import NamedTuple

import numpy as np

from .propagator import GateRecord

PHASE_GRID = 720
ZERO_AMPLITUDE_TOL = 1e-12


class ZeroAmplitudeError(ValueError):
    pass


class MethodMismatchError(ValueError):
    pass


class DecayMethod(enum.Enum):
    TR_ESTIMATE = "tr_estimate"
    NONHERMITIAN = "nonhermitian"


class PhaseSet(NamedTuple):
    phi_01: float
    phi_10: float
    phi_11: float
    magnitudes: tuple[float, float, float]
    phi_00: float = 0.0

    @property
    def entangling_phase(self) -> float:
        """``phi_11 - phi_01 - phi_10`` wrapped to ``(-pi, pi]``."""
        x = self.phi_11 - self.phi_01 - self.phi_10
        return math.pi - (math.pi - x) % (2 * math.pi)


class CzFidelity(NamedTuple):
    fidelity: float
    phi: float


def diagonal_amplitudes(u) -> np.ndarray:
    """``(<01|U|01>, <10|U|10>, <11|U|11>)`` from a 4x4 block or a record."""
    if isinstance(u, GateRecord):
        u = u.computational_block()
    u = np.asarray(u)
    if u.shape == (4, 4):
        return np.array([u[1, 1], u[2, 2], u[3, 3]])
    if u.shape == (3,):
        return u.astype(complex)
    raise ValueError(f"expected a 4x4 computational block, got shape {u.shape}")


def computational_phases(u) -> PhaseSet:
    amps = diagonal_amplitudes(u)
    mags = np.abs(amps)
    if np.any(mags < ZERO_AMPLITUDE_TOL):
        raise ZeroAmplitudeError(f"diagonal amplitude too small for a phase: {mags}")
    phi = np.angle(amps)
    return PhaseSet(float(phi[0]), float(phi[1]), float(phi[2]), tuple(map(float, mags)))


def _overlap(amps: np.ndarray, phi):
    z = np.exp(-1j * np.asarray(phi))
    return 1 + z * (amps[0] + amps[1]) - z * z * amps[2]


def fidelity_at_phase(u, phi: float) -> float:
    s = _overlap(diagonal_amplitudes(u), phi)
    return float(abs(s) ** 2 / 16)


def _refine(amps, phi0):
    """Newton iterations on dF/dphi from the grid maximum."""
    a = amps[0] + amps[1]
    b = amps[2]
    phi = phi0
    for _ in range(50):
        z = np.exp(-1j * phi)
        s = 1 + z * a - z * z * b
        ds = -1j * z * a + 2j * z * z * b
        d2s = -z * a + 4 * z * z * b
        g = 2 * (np.conj(s) * ds).real
        h = 2 * (abs(ds) ** 2 + (np.conj(s) * d2s).real)
        if abs(g) < 1e-10 * 16:
            break
        if h < 0:
            step = -g / h
        else:
            step = 1e-3 * np.sign(g)
        step = float(np.clip(step, -0.01, 0.01))
        phi += step
    return phi


def cz_fidelity(u) -> CzFidelity:
    """Fidelity to the CZ family, maximised over the local phase ``phi``.

    ``F(phi) = |1 + e^{-i phi}(u01 + u10) - e^{-2 i phi} u11|^2 / 16``.  A dense
    grid locates the maximum, Newton steps polish it.
    """
    amps = diagonal_amplitudes(u)
    grid = np.arange(PHASE_GRID) * (2 * np.pi / PHASE_GRID)
    values = np.abs(_overlap(amps, grid)) ** 2
    phi = _refine(amps, float(grid[int(np.argmax(values))]))
    f = float(abs(_overlap(amps, phi)) ** 2 / 16)
    return CzFidelity(f, float(phi % (2 * np.pi)))


def decay_limited_fidelity(
    record: GateRecord,
    gamma_r: float,
    method: DecayMethod = DecayMethod.NONHERMITIAN,
) -> float:
    """Fidelity including Rydberg decay.

    ``TR_ESTIMATE`` scales the unitary fidelity by ``1 - gamma_r T_r`` using a
    decay-free record; ``NONHERMITIAN`` evaluates the CZ fidelity of the
    sub-normalised propagator of a record made with decay ``gamma_r``.
    """
    method = DecayMethod(method)
    if method is DecayMethod.TR_ESTIMATE:
        if record.gamma_r != 0:
            raise MethodMismatchError("TR_ESTIMATE needs a record propagated without decay")
        if math.isnan(record.t_r):
            raise MethodMismatchError("record has no Rydberg time")
        return cz_fidelity(record).fidelity * (1 - gamma_r * record.t_r)
    if not math.isclose(record.gamma_r, gamma_r, rel_tol=1e-12, abs_tol=0.0):
        raise MethodMismatchError(
            f"record propagated with gamma_r={record.gamma_r}, requested {gamma_r}"
        )
    return cz_fidelity(record).fidelity
