import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from merank.backend import Embedding, ImageRef, SimBackendConfig, SimulatedBackend, generate_world  # noqa: E402
from merank.kernels import available_implementations  # noqa: E402
from merank.memory import MemoryItem  # noqa: E402

IMPLS = available_implementations()


@pytest.fixture(params=sorted(IMPLS))
def impl(request):
    """Each importable kernel module in turn (pure Python, and Cython when built)."""
    return IMPLS[request.param]


def random_unit(rng, dim=8):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def make_item(item_id, vec, score=3.0, **kw):
    return MemoryItem(item_id, ImageRef(item_id, item_id), f"desc {item_id}",
                      Embedding.normalized(vec), float(score), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(120, seed=3)


@pytest.fixture
def sim_backend(small_world):
    return SimulatedBackend(small_world, SimBackendConfig(rng_seed=3))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
