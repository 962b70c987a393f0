import numpy as np
import pytest

from sigsim.mlp import TrainConfig
from sigsim.pipeline import train_transfer_model
from sigsim.refmodel import AnalogGateParams, SweepSpec, run_characterization

COARSE = SweepSpec(ta=(5e-12, 20e-12, 3e-12), tb=(5e-12, 20e-12, 3e-12), tc=(5e-12, 20e-12, 3e-12))


@pytest.fixture(scope="session")
def coarse_inv_rows():
    return run_characterization(COARSE, AnalogGateParams(), "chain", "INV").rows


@pytest.fixture(scope="session")
def coarse_inv_split(coarse_inv_rows):
    """(model trained on 90 % of the rows, held-out rows)."""
    rng = np.random.default_rng(0)
    perm = rng.permutation(len(coarse_inv_rows))
    cut = len(perm) // 10
    held = [coarse_inv_rows[i] for i in sorted(perm[:cut])]
    train_rows = [coarse_inv_rows[i] for i in sorted(perm[cut:])]
    model = train_transfer_model(train_rows, "INV", 1, TrainConfig(epochs=600, seed=1))
    return model, held


# one line per acceptance criterion, repeated in the terminal summary
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
