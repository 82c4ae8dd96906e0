import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from spinflip.dressed import (
    INFINITE,
    TWO_PI,
    Branch,
    DegenerateBranchError,
    DressingParams,
    detuning_for_entangling_energy,
    dress_pair,
    dress_single,
    entangling_energy,
    entangling_energy_closed_form,
    pair_block,
    strong_dressing_asymptotics,
    weak_dressing_asymptotics,
)

# brute-force product-basis eigensolve over {aa, ar, ra} (|rr> deleted),
# computed once before the main build
J_MINUS_15_MHZ = 0.21999231327579494


def brute_force_j(omega_L, delta_L, v_rr=INFINITE):
    def h(o, d):
        return np.array([[0, o / 2], [o / 2, -d]])

    big = np.kron(h(omega_L, delta_L), np.eye(2)) + np.kron(np.eye(2), h(omega_L, delta_L))
    if math.isinf(v_rr):
        big = big[:3, :3]
    else:
        big[3, 3] += v_rr
    w, v = np.linalg.eigh(big)
    e2 = w[np.argmax(np.abs(v[0]))]
    w1, v1 = np.linalg.eigh(h(omega_L, delta_L))
    e1 = w1[np.argmax(np.abs(v1[0]))]
    return e2 - 2 * e1


def test_resonant_single_atom():
    p = DressingParams.from_mhz(10, 0, 1, gamma_r=1.0)
    a = dress_single(p)
    assert a.cos_half_theta == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert a.sin_half_theta == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert a.e_ls1 == pytest.approx(-p.omega_L / 2)
    assert a.e_other == pytest.approx(p.omega_L / 2)
    assert a.gamma_eff == pytest.approx(0.5)


def test_fig4_single_atom_amplitudes():
    p = DressingParams.from_mhz(10, -5.9, 1)
    a = dress_single(p)
    # closed form at tan(theta) = 10 / 5.9
    theta = math.atan(10 / 5.9)
    assert a.cos_half_theta == pytest.approx(math.cos(theta / 2), abs=1e-12)
    assert a.omega_mw_eff / TWO_PI == pytest.approx(0.868, abs=0.02)


def test_undressed_limit():
    p = DressingParams(omega_L=1e-9, delta_L=-TWO_PI * 5.9, omega_mw=TWO_PI, gamma_r=1.0)
    a = dress_single(p)
    assert a.cos_half_theta == pytest.approx(1.0, abs=1e-12)
    assert a.gamma_eff == pytest.approx(0.0, abs=1e-12)
    assert a.omega_mw_eff == pytest.approx(p.omega_mw)
    pair = dress_pair(p)
    assert pair.alpha == pytest.approx(1.0, abs=1e-12)
    assert pair.beta == pytest.approx(0.0, abs=1e-9)
    assert pair.j == pytest.approx(0.0, abs=1e-12)


def test_resonant_pair():
    p = DressingParams.from_mhz(10, 0, 1, gamma_r=1.0)
    pair = dress_pair(p)
    assert pair.j == pytest.approx((2 - math.sqrt(2)) * p.omega_L / 2, rel=1e-12)
    assert pair.omega_mw_eff_prime == pytest.approx(0.5 * (1 + 1 / math.sqrt(2)) * p.omega_mw)
    assert pair.gamma_eff_2 == pytest.approx(0.5)


def test_resonant_pair_finite_blockade_stays_on_branch():
    # the |rr> admixture must not flip the selection to the upper doublet state
    omega = TWO_PI * 10
    j_max = (2 - math.sqrt(2)) * omega / 2
    for ratio in (10.0, 1e2, 1e4):
        j = dress_pair(DressingParams(omega_L=omega, delta_L=0.0, v_rr=ratio * omega)).j
        assert 0 < j < 1.01 * j_max
    j = dress_pair(DressingParams(omega_L=omega, delta_L=0.0, v_rr=1e4 * omega)).j
    assert abs(j - j_max) < 1e-3 * omega


def test_fig4_pair_quantities():
    p = DressingParams.from_mhz(10, -5.9, 1)
    pair = dress_pair(p)
    assert pair.j / TWO_PI == pytest.approx(0.999, rel=1e-3)
    assert pair.omega_mw_eff_prime / TWO_PI == pytest.approx(0.9, abs=0.03)
    assert pair.alpha > pair.beta > 0


def test_j_at_minus_15_matches_oracle():
    p = DressingParams.from_mhz(10, -15)
    assert entangling_energy(p) / TWO_PI == pytest.approx(J_MINUS_15_MHZ, rel=1e-12)
    assert brute_force_j(p.omega_L, p.delta_L) / TWO_PI == pytest.approx(J_MINUS_15_MHZ, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    omega=st.floats(0.5, 200.0),
    ratio=st.floats(-5.0, 5.0),
)
def test_closed_form_matches_diagonalisation(omega, ratio):
    p = DressingParams(omega_L=omega, delta_L=ratio * omega)
    numeric = dress_pair(p).j
    closed = entangling_energy(p)
    assert numeric == pytest.approx(closed, rel=1e-10, abs=1e-12 * omega)


@settings(max_examples=50, deadline=None)
@given(omega=st.floats(0.5, 100.0), ratio=st.floats(-5.0, 5.0), v=st.floats(0.0, 50.0))
def test_normalisation(omega, ratio, v):
    p = DressingParams(omega_L=omega, delta_L=ratio * omega, v_rr=v * omega)
    a = dress_single(p)
    assert a.cos_half_theta**2 + a.sin_half_theta**2 == pytest.approx(1.0, abs=1e-12)
    try:
        pair = dress_pair(p)
    except DegenerateBranchError:
        return
    assert pair.alpha**2 + pair.beta**2 + pair.gamma**2 == pytest.approx(1.0, abs=1e-12)
    assert 0 <= a.omega_mw_eff <= p.omega_mw + 1e-15


def test_finite_blockade_converges():
    omega = TWO_PI * 10
    p_inf = DressingParams(omega_L=omega, delta_L=-TWO_PI * 5.9)
    j_inf = entangling_energy(p_inf)
    gaps = [
        abs(entangling_energy(p_inf.replace(v_rr=r * omega)) - j_inf)
        for r in (10, 1e2, 1e3, 1e4)
    ]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-3 * omega
    # the triplet solve agrees with a product-basis brute force
    for r in (10, 1e3):
        assert entangling_energy(p_inf.replace(v_rr=r * omega)) == pytest.approx(
            brute_force_j(omega, p_inf.delta_L, r * omega), rel=1e-10
        )


def test_weak_dressing_limit_of_j():
    omega = 1.0
    errors = []
    for s in (5, 10, 20):
        p = DressingParams(omega_L=omega, delta_L=-s * omega)
        j = dress_pair(p).j
        errors.append(abs(j - omega**4 / (8 * (s * omega) ** 3)) / abs(j))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 0.05


def test_branch_symmetry():
    for d in (-7.0, -1.0, 0.5, 3.0):
        lower = entangling_energy_closed_form(2.0, d, Branch.LOWER)
        upper = entangling_energy_closed_form(2.0, -d, Branch.UPPER)
        assert upper == pytest.approx(-lower, rel=1e-14)
    p = DressingParams.from_mhz(10, -5.9)
    q = DressingParams.from_mhz(10, 5.9)
    assert dress_pair(q).j == pytest.approx(-dress_pair(p).j, rel=1e-12)


def test_degenerate_branch_raises():
    # locate the avoided crossing of the upper-branch state with |rr>
    p = DressingParams(omega_L=1.0, delta_L=2.0)
    _, ref = np.linalg.eigh(pair_block(1.0, 2.0))
    ref = np.append(ref[:, 1], 0.0)

    def gap(v):
        _, vecs = np.linalg.eigh(pair_block(1.0, 2.0, v))
        w = np.abs(ref @ vecs)
        return w[1] - w[2]

    v_tie = brentq(gap, 3.5, 4.5, xtol=1e-15)
    with pytest.raises(DegenerateBranchError):
        dress_pair(p.replace(v_rr=v_tie))
    # slightly away from the tie the selection is well defined
    assert dress_pair(p.replace(v_rr=v_tie + 0.1)).alpha > 0


def test_weak_dressing_asymptotics():
    omega_L, omega_mw = TWO_PI * 10, TWO_PI * 1
    d, t = weak_dressing_asymptotics(omega_L, omega_mw)
    assert d == pytest.approx(omega_L ** (4 / 3) / (2 * omega_mw ** (1 / 3)), rel=1e-12)
    d2, _ = weak_dressing_asymptotics(3.0, 3.0)
    assert d2 == pytest.approx(1.5)
    assert t == pytest.approx(3.5 / (omega_L ** (2 / 3) * omega_mw ** (1 / 3)), rel=1e-12)
    # deep in the weak limit J(-delta_wdr) approaches omega_mw
    d3, _ = weak_dressing_asymptotics(1.0, 1e-4)
    assert entangling_energy(DressingParams(omega_L=1.0, delta_L=-d3)) == pytest.approx(1e-4, rel=0.02)


def test_strong_dressing_asymptotics():
    j_max, t_r, tau = strong_dressing_asymptotics(TWO_PI * 10)
    assert j_max / TWO_PI == pytest.approx(2.93, abs=0.005)
    assert t_r == pytest.approx(1.66 * math.pi / (TWO_PI * 10))
    assert t_r == pytest.approx(0.083, abs=5e-4)
    assert tau * j_max == pytest.approx(math.pi, rel=1e-15)


def test_detuning_for_entangling_energy():
    omega = TWO_PI * 10
    d = detuning_for_entangling_energy(omega, TWO_PI * 0.999015188)
    assert d / TWO_PI == pytest.approx(-5.9, abs=1e-6)
    assert math.isnan(detuning_for_entangling_energy(omega, omega))


@pytest.mark.parametrize(
    "field,value",
    [("omega_L", -1.0), ("omega_L", 0.0), ("omega_mw", -1.0), ("gamma_r", -0.1), ("v_rr", -1.0)],
)
def test_invalid_params(field, value):
    kwargs = dict(omega_L=1.0, delta_L=0.0)
    kwargs[field] = value
    with pytest.raises(ValueError, match=field):
        DressingParams(**kwargs)
