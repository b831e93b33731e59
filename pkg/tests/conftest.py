import numpy as np
import pytest

from scaleup.config import BhmConfig, McmcConfig
from scaleup.core import Covariate, CovariateSchema, Dataset
from scaleup.dgp import DgpConfig, make_replication, replication_rng

# short sampler settings for unit tests on one core
FAST_FOREST = McmcConfig(n_trees_mu=30, n_trees_tau=15, chains=1, burn_in=100, kept=100,
                         thin=1, seed=1)
FAST_BHM = BhmConfig(chains=1, burn_in=150, kept=150, seed=1)


def make_dataset(x, y, a, s, r, v, n_bene=None, kinds=None, names=None, levels=None):
    """Dataset from plain arrays; covariates default to continuous."""
    x = np.asarray(x, float).reshape(len(y), -1)
    kinds = kinds or ["continuous"] * x.shape[1]
    names = names or [f"z{j}" for j in range(x.shape[1])]
    levels = levels or {}
    schema = CovariateSchema(tuple(Covariate(nm, k, tuple(levels.get(nm, ())))
                                   for nm, k in zip(names, kinds)))
    n = len(y)
    return Dataset([f"u{i}" for i in range(n)], y, a, s, r, v,
                   np.ones(n) if n_bene is None else n_bene, x, schema)


@pytest.fixture(scope="session")
def small_replication():
    cfg = DgpConfig(scale=0.05)
    return make_replication(cfg, replication_rng(11, 0))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
