import numpy as np
import pytest

from segway_lab import minimize_gamma, preset_ecp220

PAPER_K_BAR = np.array([[0.38, 0.43, 6.38, 1.09]])
PAPER_GAMMA = 8.2


@pytest.fixture(scope="session")
def ecp220():
    return preset_ecp220()


@pytest.fixture(scope="session")
def synthesized(ecp220):
    """One shared synthesis run at the acceptance bracket; several test
    modules verify different certificates of the same result."""
    return minimize_gamma(ecp220, 0.1, 100.0, 0.1, seed=0)
