import numpy as np
import pytest

from instant_soup.engine.models import ModelSpec, build_model, init_model, parameter_shapes


def make_mlp(weights: dict, input_dim: int, width: int, classes: int, depth: int = 1):
    spec = ModelSpec("mlp", depth, width, classes, input_dim=input_dim)
    state = {n: np.zeros(s) for n, s, _ in parameter_shapes(spec)}
    state.update({k: np.asarray(v, dtype=np.float64) for k, v in weights.items()})
    return build_model(spec, state)


@pytest.fixture
def tiny_transformer():
    spec = ModelSpec("tiny-transformer", depth=2, width=8, classes=3, vocab=7, seq_len=5, heads=2)
    return init_model(spec, seed=3)


@pytest.fixture
def toy_mlp():
    """2 -> 3 -> 2 MLP: six prunable weights."""
    spec = ModelSpec("mlp", 1, 3, 2, input_dim=2)
    return init_model(spec, seed=11)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
