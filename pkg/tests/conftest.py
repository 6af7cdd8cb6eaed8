import numpy as np
import pytest

from fedpostfair.data import SynthCell, SynthSpec, synth_generate
from fedpostfair.domain import FederatedDataset

ACCEPTANCE_LINES: list[str] = []


def make_dataset(sensitive, client, label=None, features=None, num_clients=None):
    sensitive = np.asarray(sensitive, dtype=np.int64)
    n = len(sensitive)
    client = np.asarray(client, dtype=np.int64)
    label = np.zeros(n, dtype=np.int64) if label is None else np.asarray(label, dtype=np.int64)
    features = np.zeros((n, 1)) if features is None else np.asarray(features, dtype=float)
    return FederatedDataset(
        features=features,
        sensitive=sensitive,
        label=label,
        client=client,
        sample_id=np.arange(n, dtype=np.int64),
        num_clients=int(num_clients if num_clients is not None else client.max() + 1),
    )


def gaussian_spec(n=400, clients=2):
    cells = []
    for c in range(clients):
        for a, shift in ((1, 0.5), (-1, -0.5)):
            size = n * (3 if (a == 1) == (c % 2 == 0) else 1) // 4
            cells.append(SynthCell(client=c, sensitive=a, n=size, mean=[shift, 0.2 * c],
                                   weights=[1.5, -1.0], bias=0.3 * a))
    return SynthSpec(cells=cells, num_clients=clients)


@pytest.fixture
def synth_two_clients():
    """Gaussian synthetic data on two clients, with true eta."""
    return synth_generate(gaussian_spec(), seed=7)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
