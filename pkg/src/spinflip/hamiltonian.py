"""Rotating-frame Hamiltonians for the dressed microwave gate and its baselines.

Basis conventions
-----------------
One atom (microwave model): ``|0>, |1>, |a>, |r>`` with indices 0..3.
Two atoms: row-major tensor product, label ``"xy"`` at index ``4 * x + y``;
with a perfect blockade the ``|rr>`` state is removed.
Optical baseline: ``|0>, |1>, |r>`` per atom, 9 product states.
Motional model: ``|gg>, |B>, |D>, |rr>``.

The energy of ``|1>`` (and ``|11>``) is the frame zero.  Detunings enter as
``-delta`` on excited diagonals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dressed import INFINITE, Branch, DressingParams, single_light_shift

ATOM_LEVELS = ("0", "1", "a", "r")
OPTICAL_LEVELS = ("0", "1", "r")
MOTIONAL_LEVELS = ("gg", "B", "D", "rr")
COMPUTATIONAL = ("00", "01", "10", "11")

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """A square matrix over a labelled basis.

    ``rydberg`` counts atoms in ``|r>`` for each basis state (used by
    :func:`apply_decay` and Rydberg-time bookkeeping).  ``excitation`` counts
    atoms in levels that pick up the drive phase, so that
    ``H(xi) = Z H(0) Z^dagger`` with ``Z = exp(i xi diag(excitation))``.
    """

    matrix: np.ndarray
    labels: tuple[str, ...]
    rydberg: np.ndarray
    excitation: np.ndarray
    hermitian: bool = True

    def __post_init__(self):
        n = len(self.labels)
        if self.matrix.shape != (n, n):
            raise ValueError(f"matrix shape {self.matrix.shape} does not match {n} labels")
        if self.hermitian and hermiticity_error(self.matrix) > HERMITIAN_TOL * max(
            1.0, float(np.max(np.abs(self.matrix)))
        ):
            raise ValueError("matrix flagged hermitian is not")

    @property
    def dim(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def __repr__(self):
        return f"OperatorMatrix(dim={self.dim}, hermitian={self.hermitian})"


def hermiticity_error(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


@dataclass(frozen=True)
class MotionalParams:
    """Two-atom laser dressing with unequal Rabi frequencies and motion.

    ``doppler_scale`` is ``k_L / m`` in units where ``k_L * p / m`` is rad/us;
    momenta are classical parameters.  ``v_rr`` may be ``INFINITE``.
    """

    omega_L1: float
    omega_L2: float
    delta: float
    v_rr: float = INFINITE
    k_L: float = 1.0
    mass: float = 1.0
    p_rel: float = 0.0
    p_com: float = 0.0

    @property
    def omega_plus(self) -> float:
        return (self.omega_L1 + self.omega_L2) / math.sqrt(2.0)

    @property
    def omega_minus(self) -> float:
        return (self.omega_L1 - self.omega_L2) / math.sqrt(2.0)

    @property
    def rel_coupling(self) -> float:
        return self.k_L * self.p_rel / self.mass

    @property
    def com_shift(self) -> float:
        return self.k_L * self.p_com / (2 * self.mass)

    def atom_detunings(self) -> tuple[float, float]:
        """Per-atom laser detunings implied by the motional matrix elements.

        The ``|ra>`` and ``|ar>`` diagonals are ``-delta_1`` and ``-delta_2``; the
        bright/dark average gives the centre-of-mass shift and half their
        difference the ``-k p_rel / m`` bright-dark coupling.
        """
        com = self.com_shift
        rel = self.rel_coupling
        return self.delta - com + rel, self.delta - com - rel


def _microwave_resonance_offset(params: DressingParams) -> float:
    """Diagonal of bare |a> that puts the selected dressed branch at the
    requested microwave detuning."""
    branch = params.resolved_branch
    return -single_light_shift(params.omega_L, params.delta_L, branch) - params.delta_mw_override


def single_atom_matrix(
    params: DressingParams, xi: float = 0.0, tuned_to: DressingParams | None = None
) -> np.ndarray:
    """4x4 one-atom microwave/laser Hamiltonian over ``|0>, |1>, |a>, |r>``.

    ``tuned_to`` fixes the microwave frequency by the dressed resonance of a
    reference (nominal) parameter set; by default ``params`` itself.
    """
    ref = params if tuned_to is None else tuned_to
    delta_a = _microwave_resonance_offset(ref)
    h = np.zeros((4, 4), dtype=complex)
    h[2, 2] = delta_a
    h[3, 3] = delta_a - params.delta_L
    h[2, 1] = params.omega_mw / 2 * np.exp(1j * xi)
    h[1, 2] = np.conj(h[2, 1])
    h[3, 2] = h[2, 3] = params.omega_L / 2
    return h


_ATOM_RYD = np.array([0, 0, 0, 1])
_ATOM_EXC = np.array([0, 0, 1, 1])


def single_atom_hamiltonian(
    params: DressingParams, xi: float = 0.0, tuned_to: DressingParams | None = None
) -> OperatorMatrix:
    return OperatorMatrix(
        single_atom_matrix(params, xi, tuned_to),
        ATOM_LEVELS,
        _ATOM_RYD.copy(),
        _ATOM_EXC.copy(),
    )


def _pair_labels(levels):
    return tuple(x + y for x in levels for y in levels)


def _pair_counts(counts):
    return (counts[:, None] + counts[None, :]).ravel()


def _product_sum(h1, h2, v_rr, levels, ryd, exc):
    n = len(levels)
    eye = np.eye(n)
    big = np.kron(h1, eye) + np.kron(eye, h2)
    labels = _pair_labels(levels)
    rydberg = _pair_counts(ryd)
    excitation = _pair_counts(exc)
    rr = labels.index("rr")
    if math.isinf(v_rr):
        keep = np.arange(n * n) != rr
        big = big[np.ix_(keep, keep)]
        labels = tuple(lab for i, lab in enumerate(labels) if keep[i])
        rydberg, excitation = rydberg[keep], excitation[keep]
    else:
        big[rr, rr] += v_rr
    return OperatorMatrix(big, labels, rydberg, excitation)


def two_atom_hamiltonian(
    params: DressingParams,
    xi: float = 0.0,
    params2: DressingParams | None = None,
    tuned_to: DressingParams | None = None,
) -> OperatorMatrix:
    """Two-atom microwave Hamiltonian ``h1 x 1 + 1 x h2 + V_rr |rr><rr|``.

    ``params2`` gives atom 2 its own parameters (asymmetric driving); the
    interaction comes from ``params``.  Without ``tuned_to`` each atom's
    microwave is resonant with its own dressed state, so only two-atom
    effects of a parameter change remain; with ``tuned_to`` both atoms share
    the resonance of that reference parameter set.
    """
    p2 = params if params2 is None else params2
    h1 = single_atom_matrix(params, xi, tuned_to)
    h2 = single_atom_matrix(p2, xi, tuned_to)
    return _product_sum(h1, h2, params.v_rr, ATOM_LEVELS, _ATOM_RYD, _ATOM_EXC)


_OPT_RYD = np.array([0, 0, 1])


def optical_atom_matrix(omega_L: float, delta_L: float, xi_L: float = 0.0) -> np.ndarray:
    h = np.zeros((3, 3), dtype=complex)
    h[2, 2] = -delta_L
    h[2, 1] = omega_L / 2 * np.exp(1j * xi_L)
    h[1, 2] = np.conj(h[2, 1])
    return h


def optical_two_atom_hamiltonian(
    omega_L: float, delta_L: float = 0.0, v_rr: float = INFINITE, xi_L: float = 0.0
) -> OperatorMatrix:
    """Ground-Rydberg laser gate on ``{|0>, |1>, |r>}`` per atom."""
    if omega_L <= 0:
        raise ValueError(f"invalid omega_L: {omega_L!r}")
    h = optical_atom_matrix(omega_L, delta_L, xi_L)
    return _product_sum(h, h, v_rr, OPTICAL_LEVELS, _OPT_RYD, _OPT_RYD)


def motional_hamiltonian(mp: MotionalParams) -> OperatorMatrix:
    """Dressing of ``|gg>`` through bright/dark singly excited states.

    ``|D>`` couples to ``|rr>`` with ``-Omega_minus / 2``, the sign that follows
    from expanding ``(|ra> - |ar>)/sqrt(2)`` against the per-atom couplings.
    """
    dop = mp.com_shift
    h = np.zeros((4, 4), dtype=complex)
    h[1, 1] = -mp.delta + dop
    h[2, 2] = -mp.delta + dop
    h[0, 1] = h[1, 0] = mp.omega_plus / 2
    h[0, 2] = h[2, 0] = mp.omega_minus / 2
    h[1, 2] = h[2, 1] = -mp.rel_coupling
    ryd = np.array([0, 1, 1, 2])
    if math.isinf(mp.v_rr):
        return OperatorMatrix(h[:3, :3].copy(), MOTIONAL_LEVELS[:3], ryd[:3], ryd[:3].copy())
    h[3, 3] = -(2 * mp.delta - mp.v_rr) + 2 * dop
    h[1, 3] = h[3, 1] = mp.omega_plus / 2
    h[2, 3] = h[3, 2] = -mp.omega_minus / 2
    return OperatorMatrix(h, MOTIONAL_LEVELS, ryd, ryd.copy())


def apply_decay(h: OperatorMatrix, gamma_r: float) -> OperatorMatrix:
    """Non-Hermitian ``H - i (gamma_r / 2) N_r`` with ``N_r`` the Rydberg count."""
    if gamma_r == 0:
        return h
    m = h.matrix - 0.5j * gamma_r * np.diag(h.rydberg.astype(float))
    return OperatorMatrix(m, h.labels, h.rydberg, h.excitation, hermitian=False)


def phase_rotated(h: OperatorMatrix, xi: float) -> np.ndarray:
    """``Z H Z^dagger`` with ``Z = exp(i xi excitation)``."""
    d = h.excitation[:, None] - h.excitation[None, :]
    return h.matrix * np.exp(1j * xi * d)


def swap_operator(labels: tuple[str, ...]) -> np.ndarray:
    """Permutation exchanging the two atoms on a two-atom label basis."""
    n = len(labels)
    s = np.zeros((n, n))
    for i, lab in enumerate(labels):
        s[labels.index(lab[::-1]), i] = 1.0
    return s


@dataclass(frozen=True, eq=False)
class GateSystem:
    """A two-qubit system whose drive phase is the control.

    ``h0`` is the (possibly non-Hermitian) Hamiltonian at zero phase; the
    computational states are the labels ``"00", "01", "10", "11"``.
    """

    h0: OperatorMatrix
    gamma_r: float = 0.0
    kind: str = "microwave"
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.h0.dim

    def computational_indices(self) -> list[int]:
        return [self.h0.index(k) for k in COMPUTATIONAL]

    def with_decay(self, gamma_r: float) -> "GateSystem":
        base = self.meta.get("hermitian_h0", self.h0)
        return GateSystem(
            apply_decay(base, gamma_r),
            gamma_r,
            self.kind,
            {**self.meta, "hermitian_h0": base},
        )


def microwave_system(
    params: DressingParams,
    params2: DressingParams | None = None,
    tuned_to: DressingParams | None = None,
    gamma_r: float | None = None,
) -> GateSystem:
    """Microwave phase-control problem; ``gamma_r`` defaults to ``params.gamma_r``."""
    h = two_atom_hamiltonian(params, 0.0, params2, tuned_to)
    g = params.gamma_r if gamma_r is None else gamma_r
    meta = {"hermitian_h0": h, "params": params, "params2": params2, "tuned_to": tuned_to}
    return GateSystem(apply_decay(h, g), g, "microwave", meta)


def optical_system(
    omega_L: float, delta_L: float = 0.0, v_rr: float = INFINITE, gamma_r: float = 0.0
) -> GateSystem:
    """Laser phase-control baseline."""
    h = optical_two_atom_hamiltonian(omega_L, delta_L, v_rr)
    meta = {"hermitian_h0": h, "omega_L": omega_L, "delta_L": delta_L, "v_rr": v_rr}
    return GateSystem(apply_decay(h, gamma_r), gamma_r, "optical", meta)


__all__ = [
    "ATOM_LEVELS",
    "Branch",
    "COMPUTATIONAL",
    "GateSystem",
    "MotionalParams",
    "OperatorMatrix",
    "apply_decay",
    "hermiticity_error",
    "microwave_system",
    "motional_hamiltonian",
    "optical_system",
    "optical_two_atom_hamiltonian",
    "phase_rotated",
    "single_atom_hamiltonian",
    "swap_operator",
    "two_atom_hamiltonian",
]
