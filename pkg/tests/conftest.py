import contextlib

import numpy as np
import pytest

from mergevit.config import ModelConfig

ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """Small-width model that still uses the 14x14 / 7x7 token grids."""
    return ModelConfig("tiny", depth=6, dim=24, heads=2, prune_layers=(3, 4, 6),
                       n_downsampled_blocks=2, num_classes=10)


@pytest.fixture
def criterion():
    @contextlib.contextmanager
    def _run(label: str):
        try:
            yield
        except BaseException as exc:
            ACCEPTANCE.append((label, False, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"))
            raise
        ACCEPTANCE.append((label, True, ""))

    return _run


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  ({detail})" if detail else ""))
