import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spinflip.dressed import TWO_PI, DressingParams, dress_single
from spinflip.hamiltonian import (
    MotionalParams,
    apply_decay,
    hermiticity_error,
    microwave_system,
    motional_hamiltonian,
    optical_two_atom_hamiltonian,
    phase_rotated,
    single_atom_hamiltonian,
    swap_operator,
    two_atom_hamiltonian,
)

FIG4 = DressingParams.from_mhz(10, -5.9, 1)


def sym(h, a, b):
    """<a_+|H|b> for a label pair a (two labels) and a single label b."""
    i, j = (h.index(x) for x in a)
    k = h.index(b)
    return (h.matrix[i, k] + h.matrix[j, k]) / math.sqrt(2)


def test_undressed_single_atom_is_resonant_rabi():
    p = DressingParams(omega_L=1e-300, delta_L=-3.0, omega_mw=2.0)
    h = single_atom_hamiltonian(p).matrix
    np.testing.assert_allclose(h[1:3, 1:3], [[0, 1.0], [1.0, 0]], atol=1e-12)


def test_default_resonance_zeroes_dressed_branch():
    h = single_atom_hamiltonian(FIG4).matrix
    block = h[2:, 2:].real
    w, v = np.linalg.eigh(block)
    i = int(np.argmin(np.abs(w)))
    assert abs(w[i]) < 1e-10
    atom = dress_single(FIG4)
    assert abs(v[0, i]) == pytest.approx(atom.cos_half_theta, abs=1e-10)
    assert abs(v[1, i]) == pytest.approx(atom.sin_half_theta, abs=1e-10)


def test_microwave_detuning_override():
    p = FIG4.replace(delta_mw_override=0.3)
    w = np.linalg.eigvalsh(single_atom_hamiltonian(p).matrix[2:, 2:].real)
    assert np.min(np.abs(w + 0.3)) < 1e-10


def test_zero_state_decoupled():
    h = single_atom_hamiltonian(FIG4, xi=0.7).matrix
    assert np.all(h[0] == 0) and np.all(h[:, 0] == 0)
    h2 = two_atom_hamiltonian(FIG4, 0.3)
    for i, lab in enumerate(h2.labels):
        if "0" in lab:
            row = h2.matrix[i].copy()
            row[i] = 0
            # |0x> states only couple within the spectator atom's manifold
            for j in np.flatnonzero(row):
                assert h2.labels[j][lab.index("0")] == "0"


@settings(max_examples=40, deadline=None)
@given(
    omega=st.floats(0.1, 50),
    ratio=st.floats(-3, 3),
    mw=st.floats(0.01, 10),
    xi=st.floats(-10, 10),
    v=st.one_of(st.just(math.inf), st.floats(0, 100)),
)
def test_hermitian(omega, ratio, mw, xi, v):
    p = DressingParams(omega_L=omega, delta_L=ratio * omega, omega_mw=mw, v_rr=v)
    assert hermiticity_error(single_atom_hamiltonian(p, xi).matrix) < 1e-12
    assert hermiticity_error(two_atom_hamiltonian(p, xi).matrix) < 1e-12 * max(1, v if v < math.inf else 1)


def test_symmetric_pair_matrix_elements():
    xi = 0.37
    h = two_atom_hamiltonian(FIG4, xi)
    assert sym(h, ("ar", "ra"), "aa") == pytest.approx(math.sqrt(2) * FIG4.omega_L / 2)
    expected = math.sqrt(2) * FIG4.omega_mw / 2 * np.exp(1j * xi)
    assert sym(h, ("1a", "a1"), "11") == pytest.approx(expected)


def test_finite_blockade_diagonal():
    p = FIG4.replace(v_rr=TWO_PI * 50)
    h = two_atom_hamiltonian(p)
    h1 = single_atom_hamiltonian(p).matrix
    rr = h.index("rr")
    assert h.matrix[rr, rr] == pytest.approx(2 * h1[3, 3] + p.v_rr)
    assert h.dim == 16
    assert two_atom_hamiltonian(FIG4).dim == 15
    assert "rr" not in two_atom_hamiltonian(FIG4).labels


def test_swap_symmetry():
    for p in (FIG4, FIG4.replace(v_rr=20.0)):
        h = two_atom_hamiltonian(p, 1.1)
        s = swap_operator(h.labels)
        assert np.max(np.abs(s @ h.matrix - h.matrix @ s)) < 1e-12


def test_asymmetric_atoms_break_swap_symmetry():
    p2 = FIG4.replace(omega_L=FIG4.omega_L * 1.05)
    h = two_atom_hamiltonian(FIG4, 0.0, p2)
    s = swap_operator(h.labels)
    assert np.max(np.abs(s @ h.matrix - h.matrix @ s)) > 1e-3


def test_phase_covariance():
    h0 = two_atom_hamiltonian(FIG4, 0.0)
    for xi in (0.4, -2.0, 5.0):
        np.testing.assert_allclose(phase_rotated(h0, xi), two_atom_hamiltonian(FIG4, xi).matrix, atol=1e-12)


def test_optical_matrix_elements():
    h = optical_two_atom_hamiltonian(2.0, 0.5, math.inf, xi_L=0.3)
    assert h.dim == 8
    assert sym(h, ("1r", "r1"), "11") == pytest.approx(math.sqrt(2) * np.exp(0.3j))
    assert h.matrix[h.index("0r"), h.index("0r")] == pytest.approx(-0.5)
    hv = optical_two_atom_hamiltonian(2.0, 0.0, 3.0)
    assert hv.dim == 9
    assert hv.matrix[hv.index("rr"), hv.index("rr")] == pytest.approx(3.0)


def test_optical_noninteracting_factorizes():
    h = optical_two_atom_hamiltonian(1.3, 0.2, 0.0).matrix
    single = np.array([[0, 0, 0], [0, 0, 0.65], [0, 0.65, -0.2]])
    np.testing.assert_allclose(h, np.kron(single, np.eye(3)) + np.kron(np.eye(3), single), atol=1e-15)


def test_optical_requires_positive_rabi():
    with pytest.raises(ValueError, match="omega_L"):
        optical_two_atom_hamiltonian(0.0)


def test_motional_symmetric_limit():
    mp = MotionalParams(2.0, 2.0, -1.0, v_rr=5.0)
    h = motional_hamiltonian(mp).matrix
    assert mp.omega_plus == pytest.approx(2 * math.sqrt(2))
    assert mp.omega_minus == 0
    d = 2
    assert np.all(h[d, [0, 1, 3]] == 0)


def test_motional_matrix_elements():
    mp = MotionalParams(2.0, 1.5, -1.0, v_rr=5.0, k_L=2.0, mass=4.0, p_rel=0.3, p_com=0.8)
    h = motional_hamiltonian(mp).matrix
    assert h[1, 2] == pytest.approx(-2.0 * 0.3 / 4.0)
    dop = 2.0 * 0.8 / (2 * 4.0)
    assert h[1, 1] == pytest.approx(1.0 + dop)
    assert h[2, 2] == pytest.approx(1.0 + dop)
    assert h[3, 3] == pytest.approx(-(2 * -1.0 - 5.0) + 2 * dop)
    assert h[0, 2] == pytest.approx(mp.omega_minus / 2)
    assert h[2, 3] == pytest.approx(-mp.omega_minus / 2)
    assert h[1, 3] == pytest.approx(mp.omega_plus / 2)


def test_motional_dark_sign_matches_product_basis():
    # unequal Rabi frequencies, finite V: compare with the per-atom product basis
    o1, o2, d, v = 2.0, 1.2, -0.7, 3.0
    mp = MotionalParams(o1, o2, d, v_rr=v)
    h = motional_hamiltonian(mp).matrix

    def atom(o):
        return np.array([[0, o / 2], [o / 2, -d]])

    big = np.kron(atom(o1), np.eye(2)) + np.kron(np.eye(2), atom(o2))
    big[3, 3] += v
    # basis aa, ar, ra, rr -> gg, B=(ra+ar)/sqrt2, D=(ra-ar)/sqrt2, rr
    s = 1 / math.sqrt(2)
    t = np.array([[1, 0, 0, 0], [0, s, s, 0], [0, -s, s, 0], [0, 0, 0, 1]]).T
    np.testing.assert_allclose(h.real, t.T @ big @ t, atol=1e-12)


def test_motional_reduces_to_two_atom_block():
    p = FIG4.replace(omega_mw=0.0, v_rr=TWO_PI * 40)
    h2 = two_atom_hamiltonian(p)
    idx = [h2.index(k) for k in ("aa", "ar", "ra", "rr")]
    block = h2.matrix[np.ix_(idx, idx)]
    s = 1 / math.sqrt(2)
    t = np.array([[1, 0, 0], [0, s, 0], [0, s, 0], [0, 0, 1]])
    sym_block = t.T @ block @ t
    offset = block[0, 0]
    mp = MotionalParams(p.omega_L, p.omega_L, p.delta_L, v_rr=p.v_rr)
    m = motional_hamiltonian(mp).matrix[np.ix_([0, 1, 3], [0, 1, 3])]
    np.testing.assert_allclose(sym_block - offset * np.eye(3), m, atol=1e-10)


def test_motional_blockaded_drops_rr():
    h = motional_hamiltonian(MotionalParams(1.0, 1.0, -1.0))
    assert h.labels == ("gg", "B", "D")


def test_atom_detunings_consistent_with_matrix():
    mp = MotionalParams(1.0, 1.0, -2.0, k_L=1.0, mass=1.0, p_rel=0.1, p_com=0.4)
    d1, d2 = mp.atom_detunings()
    h = motional_hamiltonian(mp).matrix
    # B/D average and half-difference recover the per-atom detunings
    assert -(d1 + d2) / 2 == pytest.approx(h[1, 1].real)
    assert (d1 - d2) / 2 == pytest.approx(-h[1, 2].real)


def test_apply_decay():
    h = two_atom_hamiltonian(FIG4.replace(v_rr=30.0))
    assert apply_decay(h, 0.0) is h
    hd = apply_decay(h, 0.2)
    assert not hd.hermitian
    imag = np.diag(hd.matrix).imag
    for i, lab in enumerate(h.labels):
        assert imag[i] == pytest.approx(-0.1 * lab.count("r"))
    assert imag[h.index("rr")] == pytest.approx(-0.2)


def test_system_metadata_and_decay_roundtrip():
    s = microwave_system(FIG4, gamma_r=0.1)
    assert s.meta["params"] is FIG4
    clean = s.with_decay(0.0)
    assert clean.gamma_r == 0.0 and clean.h0.hermitian
    np.testing.assert_array_equal(clean.with_decay(0.1).h0.matrix, s.h0.matrix)
