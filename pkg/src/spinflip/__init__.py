"""Microwave spin-flip-blockade CZ gates on Rydberg-dressed atom pairs."""

from .dressed import (
    INFINITE,
    TWO_PI,
    Branch,
    DegenerateBranchError,
    DressedAtom,
    DressedPair,
    DressingParams,
    dress_pair,
    dress_single,
    entangling_energy,
    strong_dressing_asymptotics,
    weak_dressing_asymptotics,
)
from .grape import (
    BracketFailedError,
    ControlProblem,
    Cost,
    OptimizeOptions,
    QslResult,
    fidelity_gradient,
    optimize_waveform,
    qsl_search,
)
from .hamiltonian import (
    GateSystem,
    MotionalParams,
    apply_decay,
    microwave_system,
    motional_hamiltonian,
    optical_system,
    optical_two_atom_hamiltonian,
    single_atom_hamiltonian,
    two_atom_hamiltonian,
)
from .metrics import DecayMethod, computational_phases, cz_fidelity, decay_limited_fidelity
from .propagator import (
    GateRecord,
    PhaseWaveform,
    load_waveform,
    propagate,
    rydberg_time,
    save_waveform,
)

__version__ = "0.1.0"
