import warnings

import numpy as np
import pytest

from probekit.bvp import BemSystem
from probekit.dtn import assemble_dtn_pair
from probekit.geometry import Domain, build_sphere_mesh
from probekit.suite import SuiteContext

# Series values at x = (0.6, 0, 0) for the unit ball with obstacle B(0, 0.3),
# degree 40, frozen from probekit.oracle.
ORACLE_06 = {
    "I": 0.011994358047599905,
    "I1": 0.12394089321633882,
    "W_xx": 0.1359352512639387,
    "I_star": 0.008382843807515262,
    "w_xx": 0.009989147890455385,
    "w1_xx": 0.12594610337348336,
    "w_star_xx": 0.008382843807515264,
    "gap_gg": 0.00039890607420440096,
}


@pytest.fixture(autouse=True)
def _quiet_fit_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def canonical():
    """Level-3 canonical configuration shared by the oracle and acceptance tests."""
    return SuiteContext.canonical(level=3)


@pytest.fixture(scope="session")
def small_domain():
    return Domain(build_sphere_mesh((0, 0, 0), 1.0, 2), build_sphere_mesh((0, 0, 0), 0.3, 2))


@pytest.fixture(scope="session")
def small_system(small_domain):
    return BemSystem(small_domain)


@pytest.fixture(scope="session")
def small_pair(small_system):
    return assemble_dtn_pair(small_system)


@pytest.fixture(scope="session")
def empty_system():
    return BemSystem(Domain(build_sphere_mesh((0, 0, 0), 1.0, 2)))


@pytest.fixture(scope="session")
def empty_pair(empty_system):
    return assemble_dtn_pair(empty_system)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
