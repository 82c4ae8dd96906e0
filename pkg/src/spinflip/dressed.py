"""Rydberg-dressed level structure of one and two atoms.

All frequencies are angular (rad/us) and all times are in us.  Use
:meth:`DressingParams.from_mhz` to build parameters from ordinary
frequencies quoted as ``Omega / 2pi`` in MHz.

Energies are measured in a frame where the bare auxiliary state ``|a>`` sits
at zero and the Rydberg state ``|r>`` at ``-delta_L``.  Dressed amplitudes use
a phase convention where the ``|a>``-like amplitude is positive and the
Rydberg admixture of the adiabatically connected branch is positive too.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

TWO_PI = 2.0 * math.pi

#: Perfect blockade: the doubly excited state is dropped from the basis.
INFINITE = math.inf

DEGENERACY_TOL = 1e-9


class DegenerateBranchError(ValueError):
    """Two dressed eigenvectors overlap |aa> (or |ar>) equally.

    Raised near avoided crossings where selecting a branch would be arbitrary.
    """


class Branch(enum.Enum):
    LOWER = "lower"
    UPPER = "upper"


def default_branch(delta_L: float) -> Branch:
    """Branch adiabatically connected to the bare ``|a>`` state."""
    return Branch.LOWER if delta_L <= 0 else Branch.UPPER


@dataclass(frozen=True)
class DressingParams:
    """Drive and interaction parameters of the dressed two-atom system.

    Parameters
    ----------
    omega_L : float
        Rydberg-laser Rabi frequency (rad/us), strictly positive.
    delta_L : float
        Signed Rydberg-laser detuning (rad/us).
    omega_mw : float
        Bare microwave Rabi frequency coupling ``|1>`` and ``|a>`` (rad/us).
    delta_mw_override : float
        Microwave detuning from the selected dressed state (rad/us).
    v_rr : float
        Van der Waals shift of ``|rr>``; ``INFINITE`` for a perfect blockade.
    gamma_r : float
        Rydberg decay rate (1/us).
    branch : Branch or None
        Dressed branch playing the role of ``|a~>``.  ``None`` picks the branch
        adiabatically connected to ``|a>``.
    """

    omega_L: float
    delta_L: float
    omega_mw: float = 0.0
    delta_mw_override: float = 0.0
    v_rr: float = INFINITE
    gamma_r: float = 0.0
    branch: Branch | None = None

    def __post_init__(self):
        checks = [
            ("omega_L", self.omega_L > 0 and math.isfinite(self.omega_L)),
            ("delta_L", math.isfinite(self.delta_L)),
            ("omega_mw", self.omega_mw >= 0 and math.isfinite(self.omega_mw)),
            ("delta_mw_override", math.isfinite(self.delta_mw_override)),
            ("v_rr", self.v_rr >= 0 and not math.isnan(self.v_rr)),
            ("gamma_r", self.gamma_r >= 0 and math.isfinite(self.gamma_r)),
        ]
        for name, ok in checks:
            if not ok:
                raise ValueError(f"invalid {name}: {getattr(self, name)!r}")
        if self.branch is not None and not isinstance(self.branch, Branch):
            object.__setattr__(self, "branch", Branch(self.branch))

    @classmethod
    def from_mhz(
        cls,
        omega_L: float,
        delta_L: float,
        omega_mw: float = 0.0,
        delta_mw_override: float = 0.0,
        v_rr: float = INFINITE,
        gamma_r: float = 0.0,
        branch: Branch | None = None,
    ) -> "DressingParams":
        """Build from ordinary frequencies in MHz; ``gamma_r`` is in 1/us."""
        return cls(
            omega_L=TWO_PI * omega_L,
            delta_L=TWO_PI * delta_L,
            omega_mw=TWO_PI * omega_mw,
            delta_mw_override=TWO_PI * delta_mw_override,
            v_rr=TWO_PI * v_rr,
            gamma_r=gamma_r,
            branch=branch,
        )

    @property
    def blockaded(self) -> bool:
        return math.isinf(self.v_rr)

    @property
    def resolved_branch(self) -> Branch:
        return self.branch if self.branch is not None else default_branch(self.delta_L)

    def replace(self, **changes) -> "DressingParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class DressedAtom:
    cos_half_theta: float
    sin_half_theta: float
    e_ls1: float
    e_other: float
    omega_mw_eff: float
    gamma_eff: float


@dataclass(frozen=True)
class DressedPair:
    alpha: float
    beta: float
    gamma: float
    e_ls2: float
    j: float
    omega_mw_eff_prime: float
    gamma_eff_2: float


def single_block(omega_L: float, delta_L: float) -> np.ndarray:
    """The {|a>, |r>} block of the one-atom laser Hamiltonian."""
    return np.array([[0.0, omega_L / 2], [omega_L / 2, -delta_L]])


def pair_block(omega_L: float, delta_L: float, v_rr: float = INFINITE) -> np.ndarray:
    """The symmetric {|aa>, |ar>_+, |rr>} block; |rr> is dropped for INFINITE."""
    c = math.sqrt(2.0) * omega_L / 2
    if math.isinf(v_rr):
        return np.array([[0.0, c], [c, -delta_L]])
    return np.array(
        [
            [0.0, c, 0.0],
            [c, -delta_L, c],
            [0.0, c, -2 * delta_L + v_rr],
        ]
    )


def single_light_shift(omega_L: float, delta_L: float, branch: Branch) -> float:
    """Closed-form one-atom light shift of the requested branch."""
    root = math.hypot(omega_L, delta_L)
    sign = -1.0 if branch is Branch.LOWER else 1.0
    return -delta_L / 2 + sign * root / 2


def dress_single(params: DressingParams) -> DressedAtom:
    branch = params.resolved_branch
    omega_L, delta_L = params.omega_L, params.delta_L
    # theta in [0, pi) with tan(theta) = -omega_L / delta_L
    theta = math.atan2(omega_L, -delta_L)
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    # the LOWER eigenvector of single_block is cos|a> - sin|r>; the sign of |r>
    # is absorbed into the amplitude convention
    if branch is Branch.UPPER:
        c, s = s, c
    e_ls1 = single_light_shift(omega_L, delta_L, branch)
    e_other = single_light_shift(
        omega_L, delta_L, Branch.UPPER if branch is Branch.LOWER else Branch.LOWER
    )
    return DressedAtom(
        cos_half_theta=c,
        sin_half_theta=s,
        e_ls1=e_ls1,
        e_other=e_other,
        omega_mw_eff=c * params.omega_mw,
        gamma_eff=s * s * params.gamma_r,
    )


def _blockaded_vector(params: DressingParams) -> np.ndarray:
    """Doublet eigenvector of the selected branch, embedded in the triplet.

    Energy order of the doublet matches the single-atom branch, which keeps
    the choice defined at ``delta_L = 0``.
    """
    _, vecs = np.linalg.eigh(pair_block(params.omega_L, params.delta_L))
    k = 0 if params.resolved_branch is Branch.LOWER else 1
    return np.append(vecs[:, k], 0.0)


def _select_pair_vector(vals, vecs, params: DressingParams):
    """Triplet eigenvector continuing the blockaded branch state.

    Away from resonance this is the largest-``|alpha|`` state; at resonance
    the ``|rr>`` admixture can tip ``|alpha|`` towards the other branch, so
    the overlap with the blockaded state decides instead.
    """
    weights = np.abs(_blockaded_vector(params) @ vecs)
    order = np.argsort(weights)[::-1]
    if weights[order[0]] - weights[order[1]] < DEGENERACY_TOL:
        raise DegenerateBranchError(
            f"dressed pair branch is degenerate (overlap {weights[order[0]]:.12f} "
            f"vs {weights[order[1]]:.12f})"
        )
    k = order[0]
    return vals[k], vecs[:, k]


def dress_pair(params: DressingParams) -> DressedPair:
    """Dress the symmetric two-atom manifold and pick the |aa>-connected state.

    With a perfect blockade the {|aa>, |ar>_+} doublet is diagonalised, else
    the full triplet including ``|rr>`` at ``V_rr``.
    """
    block = pair_block(params.omega_L, params.delta_L, params.v_rr)
    vals, vecs = np.linalg.eigh(block)
    if params.blockaded:
        k = 0 if params.resolved_branch is Branch.LOWER else 1
        e2, v = vals[k], vecs[:, k]
    else:
        e2, v = _select_pair_vector(vals, vecs, params)
    v = v * (1.0 if v[0] >= 0 else -1.0)
    atom = dress_single(params)
    # raw single-atom eigenvector (|a>, |r>) in the same convention as ``v``
    _, svecs = np.linalg.eigh(single_block(params.omega_L, params.delta_L))
    u = svecs[:, 0 if params.resolved_branch is Branch.LOWER else 1]
    u = u * (1.0 if u[0] >= 0 else -1.0)
    omega_p = (v[0] * u[0] + v[1] * u[1] / math.sqrt(2.0)) * params.omega_mw

    alpha = float(v[0])
    # report the |ar>_+ amplitude with the same sign flip that makes the
    # single-atom Rydberg amplitude positive
    beta = float(v[1] * (1.0 if u[1] >= 0 else -1.0))
    gamma = float(v[2]) if len(v) > 2 else 0.0
    e_ls1 = atom.e_ls1
    return DressedPair(
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        e_ls2=float(e2),
        j=float(e2 - 2 * e_ls1),
        omega_mw_eff_prime=float(omega_p),
        gamma_eff_2=float((beta**2 + 2 * gamma**2) * params.gamma_r),
    )


def entangling_energy_closed_form(omega_L: float, delta_L: float, branch: Branch) -> float:
    """Perfect-blockade closed form ``J = (delta +/- (R2 - 2 R1)) / 2``."""
    r1 = math.hypot(omega_L, delta_L)
    r2 = math.sqrt(2 * omega_L**2 + delta_L**2)
    sign = -1.0 if branch is Branch.LOWER else 1.0
    return 0.5 * (delta_L + sign * (r2 - 2 * r1))


def entangling_energy(params: DressingParams) -> float:
    """Nonlinear two-atom light shift ``J = E2 - 2 E1`` (rad/us)."""
    if params.blockaded:
        return entangling_energy_closed_form(
            params.omega_L, params.delta_L, params.resolved_branch
        )
    return dress_pair(params).j


def weak_dressing_asymptotics(omega_L: float, omega_mw: float) -> tuple[float, float]:
    """Optimal weak-dressing detuning (J = omega_mw) and its Rydberg time.

    Returns ``(delta_wdr, t_r_wdr)`` in rad/us and us.
    """
    if omega_L <= 0 or omega_mw <= 0:
        raise ValueError("omega_L and omega_mw must be positive")
    delta_wdr = omega_L ** (4 / 3) / (2 * omega_mw ** (1 / 3))
    t_r_wdr = 3.5 / (omega_L ** (2 / 3) * omega_mw ** (1 / 3))
    return delta_wdr, t_r_wdr


def strong_dressing_asymptotics(omega_L: float) -> tuple[float, float, float]:
    """Resonant-dressing limits ``(j_max, t_r_sdr, tau_limit)``."""
    if omega_L <= 0:
        raise ValueError("omega_L must be positive")
    j_max = (2 - math.sqrt(2.0)) * omega_L / 2
    t_r_sdr = 1.66 * math.pi / omega_L
    return j_max, t_r_sdr, math.pi / j_max


def detuning_for_entangling_energy(
    omega_L: float, target_j: float, branch: Branch = Branch.LOWER
) -> float:
    """Perfect-blockade detuning on the given side giving ``|J| = target_j``.

    Returns ``nan`` when ``target_j`` exceeds the resonant maximum.
    """
    from scipy.optimize import brentq

    j_max = (2 - math.sqrt(2.0)) * omega_L / 2
    if target_j <= 0 or target_j > j_max:
        return math.nan
    side = -1.0 if branch is Branch.LOWER else 1.0

    def f(x):
        return abs(entangling_energy_closed_form(omega_L, side * x, branch)) - target_j

    hi = omega_L
    while f(hi) > 0:
        hi *= 2
    if f(0.0) == 0:
        return 0.0
    return side * brentq(f, 0.0, hi, xtol=1e-14 * omega_L, rtol=1e-14)
