"""GRAPE optimisation of piecewise-constant phase waveforms.

The fidelity is the CZ-family fidelity maximised over the local phase, so
by the envelope theorem its gradient is the partial derivative at the
maximising phase.  Segment derivatives are exact: with
``U_k = U(0) * exp(i xi_k D)`` (elementwise, ``D_jl = n_j - n_l``) one has
``dU_k / dxi_k = i D * U_k``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .hamiltonian import GateSystem
from .metrics import cz_fidelity
from .propagator import PhaseWaveform, expm_eig, phase_difference

log = logging.getLogger(__name__)

DEFAULT_SEGMENTS = 40
DEFAULT_EPSILON = 1e-4


class BracketFailedError(RuntimeError):
    pass


class Cost(enum.Enum):
    FIDELITY = "fidelity"
    FIDELITY_MINUS_TR_PENALTY = "fidelity_minus_tr_penalty"


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """What to optimise: one system or a weighted ensemble of systems.

    With ``FIDELITY_MINUS_TR_PENALTY`` every member is propagated with an extra
    decay ``tr_weight`` on Rydberg levels, which to first order subtracts
    ``tr_weight * T_r`` from the fidelity while keeping gradients exact.
    """

    system: GateSystem
    n_segments: int = DEFAULT_SEGMENTS
    tau: float = 1.0
    cost: Cost = Cost.FIDELITY
    tr_weight: float = 0.0
    ensemble: tuple = ()

    def __post_init__(self):
        if self.n_segments < 2:
            raise ValueError("n_segments must be at least 2")
        if not self.tau > 0:
            raise ValueError(f"invalid tau: {self.tau!r}")

    def with_tau(self, tau: float) -> "ControlProblem":
        return replace(self, tau=tau)

    def members(self) -> list[tuple[GateSystem, float]]:
        members = list(self.ensemble) if self.ensemble else [(self.system, 1.0)]
        if self.cost is Cost.FIDELITY_MINUS_TR_PENALTY and self.tr_weight > 0:
            members = [(s.with_decay(s.gamma_r + self.tr_weight), w) for s, w in members]
        return members


@dataclass(frozen=True)
class OptimizeOptions:
    """Optimizer settings.

    A restart stops when ``1 - F < eps_f``, after ``max_iter`` iterations, or
    when one iteration improves ``F`` by less than ``stall * eps_f``.
    """

    max_iter: int = 2000
    gtol: float = 1e-12
    restarts: int = 5
    seed: int = 0
    eps_f: float = 1e-9
    stall: float = 1e-3

    def __post_init__(self):
        for name in ("max_iter", "restarts"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("gtol", "eps_f", "stall"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(eq=False)
class OptimizeResult:
    waveform: PhaseWaveform
    fidelity: float
    trace: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    restarts_used: int = 0


@dataclass(eq=False)
class QslResult:
    tau_star: float
    fidelity: float
    bracket: tuple
    probes: list
    waveform: PhaseWaveform | None = None
    epsilon: float = DEFAULT_EPSILON


class _Member:
    """Cached propagation data of one system at a fixed segment length."""

    def __init__(self, system: GateSystem, dt: float):
        self.u0 = expm_eig(system.h0.matrix, dt)
        self.d = phase_difference(system)
        idx = system.computational_indices()
        self.idx = np.array(idx[1:])

    def evaluate(self, phases: np.ndarray, grad: bool = True):
        segs = self.u0[None] * np.exp(1j * phases[:, None, None] * self.d[None])
        n = phases.size
        dim = self.u0.shape[0]
        cols = np.arange(3)
        fw = np.empty((n + 1, dim, 3), dtype=complex)
        fw[0] = 0
        fw[0][self.idx, cols] = 1
        for k in range(n):
            fw[k + 1] = segs[k] @ fw[k]
        amps = fw[n][self.idx, cols]
        f, phi = cz_fidelity(amps)
        if not grad:
            return f, phi, None
        bw = np.empty((n + 1, 3, dim), dtype=complex)
        bw[n] = 0
        bw[n][cols, self.idx] = 1
        for k in range(n - 1, -1, -1):
            bw[k] = bw[k + 1] @ segs[k]
        # du[k, a] = <a| U_N..U_{k+1} (i D * U_k) U_{k-1}..U_1 |a>
        du = np.einsum("kan,knm,kma->ka", bw[1:], 1j * self.d[None] * segs, fw[:-1])
        z = np.exp(-1j * phi)
        s = 1 + z * (amps[0] + amps[1]) - z * z * amps[2]
        c = np.array([z, z, -z * z])
        g = 2 * np.real(np.conj(s) * (du @ c)) / 16
        return f, phi, g


class _Objective:
    def __init__(self, problem: ControlProblem):
        dt = problem.tau / problem.n_segments
        self.members = [(_Member(s, dt), w) for s, w in problem.members()]
        self.total = sum(w for _, w in self.members)

    def __call__(self, phases, grad=True):
        f = 0.0
        g = np.zeros(phases.size) if grad else None
        for m, w in self.members:
            fm, _, gm = m.evaluate(phases, grad)
            f += w * fm
            if grad:
                g += w * gm
        f /= self.total
        if grad:
            g /= self.total
        return f, g


def fidelity_and_gradient(problem: ControlProblem, wf: PhaseWaveform):
    _check(problem, wf)
    return _Objective(problem)(wf.phases)


def fidelity_gradient(problem: ControlProblem, wf: PhaseWaveform) -> np.ndarray:
    """Exact ``dF / dxi_i`` for every segment."""
    return fidelity_and_gradient(problem, wf)[1]


def problem_fidelity(problem: ControlProblem, wf: PhaseWaveform) -> float:
    _check(problem, wf)
    return _Objective(problem)(wf.phases, grad=False)[0]


def _check(problem, wf):
    if wf.n_segments != problem.n_segments:
        raise ValueError(
            f"waveform has {wf.n_segments} segments, problem expects {problem.n_segments}"
        )
    if not math.isclose(wf.tau, problem.tau, rel_tol=1e-12):
        raise ValueError(f"waveform tau {wf.tau} differs from problem tau {problem.tau}")


def _rng_for(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def optimize_waveform(
    problem: ControlProblem,
    init: PhaseWaveform | None = None,
    opts: OptimizeOptions = OptimizeOptions(),
    stream: tuple = (),
) -> OptimizeResult:
    """Maximise the problem fidelity over restarts.

    The first start is ``init`` (all-zero if omitted); the others draw
    uniform phases in ``[-pi, pi)`` from a generator seeded by
    ``(opts.seed, *stream)``.  Stops early once ``1 - F < opts.eps_f``.
    """
    n = problem.n_segments
    if init is not None:
        if init.n_segments != n:
            init = init.resampled(n)
        x_first = init.phases.copy()
    else:
        x_first = np.zeros(n)
    rng = _rng_for(opts.seed, *stream)
    objective = _Objective(problem)

    best_f, best_x = -np.inf, x_first
    trace: list[float] = []
    iterations = 0
    restarts_used = 0

    class _Done(Exception):
        pass

    for r in range(opts.restarts):
        x0 = x_first if r == 0 else rng.uniform(-np.pi, np.pi, n)
        restarts_used += 1
        state = {"f": -np.inf, "x": x0}

        def fun(x):
            f, g = objective(x)
            if f > state["f"]:
                state["f"], state["x"] = f, x.copy()
            return -f, -g

        def callback(xk):
            nonlocal iterations
            iterations += 1
            trace.append(max(best_f, state["f"]))
            if 1 - state["f"] < opts.eps_f:
                raise _Done

        try:
            minimize(
                fun,
                x0,
                jac=True,
                method="L-BFGS-B",
                callback=callback,
                options={
                    "maxiter": opts.max_iter,
                    "gtol": opts.gtol,
                    "ftol": opts.stall * opts.eps_f,
                },
            )
        except _Done:
            pass
        if state["f"] > best_f:
            best_f, best_x = state["f"], state["x"]
        if trace and trace[-1] < best_f:
            trace.append(best_f)
        if 1 - best_f < opts.eps_f:
            break

    converged = 1 - best_f < opts.eps_f
    if not converged:
        log.info("no convergence at tau=%.6g: best infidelity %.3e", problem.tau, 1 - best_f)
    if not trace:
        trace.append(best_f)
    return OptimizeResult(
        waveform=PhaseWaveform(best_x, problem.tau),
        fidelity=float(best_f),
        trace=trace,
        converged=converged,
        iterations=iterations,
        restarts_used=restarts_used,
    )


def qsl_search(
    problem: ControlProblem,
    tau_bounds: tuple[float, float],
    epsilon: float = DEFAULT_EPSILON,
    opts: OptimizeOptions = OptimizeOptions(),
    rel_tol: float = 0.01,
    max_extend: int = 8,
    stream: tuple = (),
) -> QslResult:
    """Shortest ``tau`` at which GRAPE reaches ``F >= 1 - epsilon``.

    The bracket is widened geometrically until the lower end fails and the
    upper end passes, then bisected until its width is below
    ``rel_tol * tau_star``.  Each probe is warm-started from the passing probe
    nearest in ``tau``.  Probe ``k`` seeds its restarts with
    ``(opts.seed, *stream, k)``.
    """
    lo, hi = map(float, tau_bounds)
    if not 0 < lo < hi:
        raise ValueError(f"invalid tau bounds {tau_bounds!r}")
    # a probe only has to cross the threshold
    probe_opts = replace(opts, eps_f=epsilon)
    probes: list[tuple[float, float]] = []
    passing: dict[float, OptimizeResult] = {}

    def run(tau: float) -> bool:
        init = None
        if passing:
            nearest = min(passing, key=lambda t: abs(t - tau))
            init = passing[nearest].waveform.with_tau(tau)
        res = optimize_waveform(
            problem.with_tau(tau), init, probe_opts, stream=(*stream, len(probes))
        )
        probes.append((tau, res.fidelity))
        ok = 1 - res.fidelity <= epsilon
        if ok:
            passing[tau] = res
        log.debug("qsl probe tau=%.6g F=%.8f %s", tau, res.fidelity, "pass" if ok else "fail")
        return ok

    for _ in range(max_extend + 1):
        if run(hi):
            break
        lo, hi = hi, hi * 1.5
    else:
        raise BracketFailedError(
            f"no tau up to {hi / 1.5:.6g} reached fidelity 1 - {epsilon:g}"
        )
    for _ in range(max_extend + 1):
        if not run(lo):
            break
        hi, lo = lo, lo / 1.5
    else:
        raise BracketFailedError(f"every probed tau down to {lo * 1.5:.6g} passed")

    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if run(mid):
            hi = mid
        else:
            lo = mid
    best = passing[hi]
    return QslResult(
        tau_star=hi,
        fidelity=best.fidelity,
        bracket=(lo, hi),
        probes=sorted(probes),
        waveform=best.waveform,
        epsilon=epsilon,
    )
