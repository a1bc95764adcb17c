import numpy as np
import pytest

from smelab import data, fedavg, models


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_spec():
    return models.mlp(input_shape=(1, 4, 4), classes=3, hidden=(5,))


@pytest.fixture
def small_data():
    return data.synth_dataset("striped-patterns", 6, shape=(1, 4, 4), classes=3, seed=3)


def make_update(spec, dataset, epochs=2, batch_size=3, lr=0.1, seed=0, init_seed=0, record=True):
    w0 = models.init_weights(spec, init_seed)
    cfg = fedavg.ClientConfig(epochs=epochs, batch_size=batch_size, lr=lr, seed=seed)
    return fedavg.client_update(spec, w0, dataset, cfg, record_steps=record)


# one line per acceptance criterion, shown in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
