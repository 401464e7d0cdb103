"""
Tests for synthetic benchmark generation.
"""
import json

import pytest

from scripts.generate_benchmark import BenchmarkGenerator
from src.python.benchmark_io import emit_benchmark, load_benchmark, parse_benchmark


class TestBenchmarkGenerator:
    """Seeded netlists with a capacity hotspot."""

    @pytest.fixture
    def generator(self):
        return BenchmarkGenerator(seed=42)

    def test_same_seed_same_text(self):
        first = BenchmarkGenerator(seed=7).generate_benchmark(50)
        second = BenchmarkGenerator(seed=7).generate_benchmark(50)
        assert emit_benchmark(first) == emit_benchmark(second)

    def test_output_parses(self, generator):
        benchmark = generator.generate_benchmark(60, grid=(12, 10, 2), name="g")
        parsed = parse_benchmark(emit_benchmark(benchmark), name="g")
        assert parsed.dims == (12, 10, 2)
        assert len(parsed.nets) == 60
        assert all(2 <= len(net.pins) <= 4 for net in parsed.nets)

    def test_hotspot_capacity(self, generator):
        benchmark = generator.generate_benchmark(10)
        grid = benchmark.build_grid()
        x0, y0, _, _ = generator.hotspot(16, 16)
        assert grid.capacity_of(((x0, y0, 0), (x0 + 1, y0, 0))) == generator.hotspot_capacity
        assert grid.capacity_of(((0, 0, 0), (1, 0, 0))) == generator.capacity

    def test_single_layer_rejected(self, generator):
        with pytest.raises(ValueError):
            generator.generate_benchmark(5, grid=(8, 8, 1))

    def test_save_with_metadata(self, generator, tmp_path):
        benchmark = generator.generate_benchmark(20, name="synthetic")
        path, meta_path = generator.save_with_metadata(benchmark, tmp_path / "synthetic.gr")
        assert len(load_benchmark(path).nets) == 20
        metadata = json.loads(meta_path.read_text())
        assert metadata["seed"] == 42
        assert metadata["n_nets"] == 20
        assert sum(metadata["pin_count_distribution"].values()) == 20
        assert metadata["hotspot"]["adjusted_edges"] == len(benchmark.adjustments)
