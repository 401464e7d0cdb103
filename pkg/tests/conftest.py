"""
Pytest configuration and shared fixtures.
"""
import pytest
from pathlib import Path
import sys

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.python.benchmark_io import load_benchmark
from src.python.config import parse_config
from src.python.evaluate import Design, FakeClock
from src.python.grid import GcellGrid, LayerDirection, Net
from src.python.strategy import baseline_document, baseline_strategy

REPO_ROOT = Path(__file__).parent.parent
BENCHMARKS = REPO_ROOT / "data" / "benchmarks"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end evolution runs on the bundled congested benchmark")


def make_grid(nx=4, ny=4, capacity=2, layers=2, tile=(10.0, 10.0)):
    """Alternating layers starting with a horizontal one."""
    dirs = [LayerDirection.HORIZONTAL if l % 2 == 0 else LayerDirection.VERTICAL for l in range(layers)]
    return GcellGrid(dims=(nx, ny, layers), tile=tile, layer_dirs=dirs, layer_capacity=[capacity] * layers)


@pytest.fixture
def grid():
    """4x4 two-layer grid, two tracks per edge."""
    return make_grid()


@pytest.fixture
def two_pin_net():
    return Net(id="a", pins=((0, 0, 0), (3, 2, 0)))


@pytest.fixture
def nets():
    """A handful of nets on the 4x4 grid, one multi-pin."""
    return (
        Net(id="a", pins=((0, 0, 0), (3, 2, 0))),
        Net(id="b", pins=((1, 3, 0), (2, 0, 0))),
        Net(id="c", pins=((0, 3, 0), (3, 3, 0), (2, 1, 0))),
        Net(id="d", pins=((1, 1, 0), (1, 1, 1))),
    )


@pytest.fixture
def baseline():
    return baseline_strategy()


@pytest.fixture
def baseline_doc():
    return baseline_document()


@pytest.fixture
def fake_clock():
    return FakeClock(step=1.0)


@pytest.fixture
def minimal_path():
    return BENCHMARKS / "minimal.gr"


@pytest.fixture
def overfull_path():
    return BENCHMARKS / "overfull.gr"


@pytest.fixture
def small_design(nets):
    return Design(name="small", grid=make_grid(capacity=3), nets=nets)


@pytest.fixture
def minimal_design(minimal_path):
    return load_benchmark(minimal_path).to_design()


@pytest.fixture
def run_config(tmp_path, minimal_path):
    """Short scripted run on the minimal benchmark with a fake clock."""
    def build(run_name="run", **overrides):
        data = {
            "design": str(minimal_path),
            "run_dir": str(tmp_path / run_name),
            "max_iterations": 4,
            "repair_budget": 3,
            "seed": 7,
            "clock": {"kind": "fake", "step_s": 0.5},
        }
        data.update(overrides)
        return parse_config(data)
    return build
