import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from spinflip.dressed import TWO_PI, DressingParams
from spinflip.hamiltonian import apply_decay, microwave_system, optical_system, two_atom_hamiltonian
from spinflip.propagator import (
    DimensionMismatchError,
    MissingTrajectoryError,
    PhaseWaveform,
    converged_rydberg_time,
    load_waveform,
    propagate,
    rydberg_time,
    save_waveform,
    segment_propagators,
    state_rydberg_time,
)

from conftest import OPTIMUM

UNDRESSED = DressingParams(omega_L=1e-300, delta_L=-1.0, omega_mw=TWO_PI)


def random_waveform(n, tau, seed):
    return PhaseWaveform(np.random.default_rng(seed).uniform(-np.pi, np.pi, n), tau)


def test_waveform_validation():
    with pytest.raises(ValueError):
        PhaseWaveform(np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        PhaseWaveform(np.array([]), 1.0)
    with pytest.raises(ValueError):
        PhaseWaveform(np.array([np.nan]), 1.0)
    wf = PhaseWaveform(np.zeros(4), 2.0)
    assert wf.dt == 0.5 and wf.n_segments == 4


def test_resonant_pi_pulse_without_dressing():
    system = microwave_system(UNDRESSED)
    wf = PhaseWaveform.zeros(10, math.pi / UNDRESSED.omega_mw)
    rec = propagate(system, wf, ["01"])
    pops = rec.trajectories["01"][1][-1]
    assert pops[system.h0.index("0a")] == pytest.approx(1.0, abs=1e-8)


def test_no_dressing_gives_zero_rydberg_time():
    rec = propagate(microwave_system(UNDRESSED), random_waveform(12, 1.0, 3))
    assert rec.t_r == pytest.approx(0.0, abs=1e-20)


def test_optical_flop_rydberg_time_is_half_period():
    omega = TWO_PI * 2
    wf = PhaseWaveform.zeros(8, TWO_PI / omega)
    rec = propagate(optical_system(omega), wf)
    assert state_rydberg_time(rec, "01") == pytest.approx(wf.tau / 2, rel=1e-4)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(2, 30), tau=st.floats(0.1, 5.0))
def test_unitary_without_decay(seed, n, tau):
    system = microwave_system(OPTIMUM.replace(v_rr=TWO_PI * 50), gamma_r=0.0)
    rec = propagate(system, random_waveform(n, tau, seed))
    eye = np.eye(system.dim)
    assert np.max(np.abs(rec.u_total.conj().T @ rec.u_total - eye)) < 1e-10
    for u in rec.u_segments:
        assert np.max(np.abs(u.conj().T @ u - eye)) < 1e-10
    for norm in rec.norms.values():
        assert norm == pytest.approx(1.0, abs=1e-10)
    assert rec.t_r >= 0


def test_segment_propagators_match_expm():
    system = microwave_system(OPTIMUM)
    wf = random_waveform(5, 1.0, 1)
    for k, u in enumerate(segment_propagators(system, wf)):
        h = apply_decay(two_atom_hamiltonian(OPTIMUM, wf.phases[k]), system.gamma_r).matrix
        np.testing.assert_allclose(u, scipy.linalg.expm(-1j * h * wf.dt), atol=1e-10)


def test_composition():
    system = microwave_system(OPTIMUM)
    wf = random_waveform(20, 1.3, 7)
    first, second = wf.split(8)
    u = propagate(system, second, ()).u_total @ propagate(system, first, ()).u_total
    np.testing.assert_allclose(u, propagate(system, wf, ()).u_total, atol=1e-10)


def test_decay_monotone_norm():
    system = microwave_system(OPTIMUM.replace(gamma_r=0.5))
    rec = propagate(system, random_waveform(10, 1.3, 2))
    for key in ("01", "10", "11"):
        norms = rec.trajectories[key][1].sum(axis=1)
        assert np.all(np.diff(norms) <= 1e-14)
        assert norms[-1] < 1


def test_swap_symmetric_amplitudes():
    system = microwave_system(OPTIMUM)
    rec = propagate(system, random_waveform(16, 1.3, 5), ())
    u = rec.computational_block()
    assert abs(u[1, 1] - u[2, 2]) < 1e-10


def test_substep_convergence(optimum_gate):
    problem, res = optimum_gate
    t32 = propagate(problem.system, res.waveform, substeps=32).t_r
    t64 = propagate(problem.system, res.waveform, substeps=64).t_r
    assert abs(t64 - t32) < 1e-4 * t64
    t_conv, m = converged_rydberg_time(problem.system, res.waveform)
    assert abs(t_conv - t32) < 2e-4 * t32 and m >= 64


def test_rydberg_time_at_optimum(optimum_gate):
    problem, res = optimum_gate
    rec = propagate(problem.system, res.waveform)
    # F_r = 0.9992 at 1 / Gamma_r = 150 us corresponds to roughly 0.12 us
    assert rec.t_r == pytest.approx(0.12, abs=0.05)


def test_doubly_dressed_population_peak(optimum_gate):
    problem, res = optimum_gate
    system = problem.system
    rec = propagate(system, res.waveform, ["11"])
    idx = [system.h0.index(k) for k in ("aa", "ar", "ra")]
    block = system.h0.matrix[np.ix_(idx, idx)].real
    _, v = np.linalg.eigh(block)
    aa = v[:, int(np.argmax(np.abs(v[0])))]
    # state at each segment boundary from the stored segment propagators
    psi = np.zeros(system.dim, dtype=complex)
    psi[system.h0.index("11")] = 1
    peak = 0.0
    for u in rec.u_segments:
        psi = u @ psi
        peak = max(peak, abs(aa.conj() @ psi[idx]) ** 2)
    assert peak > 0.5


def test_missing_trajectory():
    rec = propagate(microwave_system(OPTIMUM), random_waveform(4, 1.0, 0), ["01"])
    assert math.isnan(rec.t_r)
    with pytest.raises(MissingTrajectoryError):
        rydberg_time(rec)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        propagate(microwave_system(OPTIMUM), random_waveform(4, 1.0, 0), [np.ones(3)])


def test_waveform_file_round_trip(tmp_path):
    wf = PhaseWaveform(np.random.default_rng(0).uniform(-np.pi, np.pi, 40), 1.2345678901234567)
    path = tmp_path / "wf.txt"
    save_waveform(wf, path)
    back = load_waveform(path)
    assert back.tau == wf.tau
    np.testing.assert_array_equal(back.phases, wf.wrapped())
    save_waveform(back, tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_text() == path.read_text()
    lines = path.read_text().splitlines()
    assert lines[0] == "N=40" and lines[1].startswith("tau_us=")


def test_waveform_file_rejects_wrong_count(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("N=3\ntau_us=1\n0.1\n0.2\n")
    with pytest.raises(ValueError, match="N=3"):
        load_waveform(path)


def test_resample_preserves_constant():
    wf = PhaseWaveform(np.full(10, 0.7), 1.0).resampled(25)
    np.testing.assert_allclose(wf.phases, 0.7)
