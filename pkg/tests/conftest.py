import numpy as np
import pytest

from credmort import gapc
from credmort.popsim import SimConfig, simulate
from credmort.table import MortalityTable


@pytest.fixture(scope="session")
def sim():
    return simulate(SimConfig())


@pytest.fixture(scope="session")
def global_fit(sim):
    return gapc.fit(sim.tables["0"], "LC")


def lc_table(alpha, beta, kappa, exposure, ages0=60, year0=2000, rng=None, population="x"):
    """Table from an exact LC surface; Poisson deaths if ``rng`` is given, else expected deaths."""
    alpha, beta, kappa = map(np.asarray, (alpha, beta, kappa))
    mu = np.exp(alpha[:, None] + beta[:, None] * kappa[None, :])
    E = np.broadcast_to(np.asarray(exposure, dtype=float), mu.shape)
    D = E * mu if rng is None else rng.poisson(E * mu).astype(float)
    return MortalityTable(population, np.arange(ages0, ages0 + alpha.size), np.arange(year0, year0 + kappa.size), E, D)
