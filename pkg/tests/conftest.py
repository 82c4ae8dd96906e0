import pytest

from spinflip.dressed import DressingParams
from spinflip.grape import ControlProblem, OptimizeOptions, optimize_waveform
from spinflip.hamiltonian import microwave_system

# Omega_L / 2pi = 10 MHz, Delta_L / 2pi = -5.9 MHz, Omega_mw / 2pi = 1 MHz
OPTIMUM = DressingParams.from_mhz(10, -5.9, 1)
LIFETIME_US = 150.0


@pytest.fixture(scope="session")
def optimum_gate():
    """GRAPE waveform at 1.3 us for the operating point, decay-free."""
    problem = ControlProblem(microwave_system(OPTIMUM, gamma_r=0.0), 40, 1.3)
    res = optimize_waveform(problem, None, OptimizeOptions(restarts=8, seed=0))
    return problem, res


# one line per acceptance criterion, printed after the run whatever the capture mode
ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[k])
