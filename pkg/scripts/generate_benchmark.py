#!/usr/bin/env python3
"""
Synthetic global-routing benchmark generator.
Writes an ISPD-2008-dialect .gr file with a capacity hotspot in the die centre.
"""

import argparse
import json
import sys
from collections import Counter
from datetime import datetime
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from src.python.benchmark_io import Benchmark, BenchmarkNet, emit_benchmark  # noqa: E402
from src.python.grid import CapacityAdjustment, make_edge  # noqa: E402


class BenchmarkGenerator:
    """Generate placed netlists on a GCell grid for router experiments."""

    def __init__(self, seed=None, capacity=8, hotspot_capacity=None, tile=10,
                 hotspot_share=0.33, max_span=5):
        """Initialize generator with optional random seed."""
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.capacity = capacity
        self.hotspot_capacity = capacity // 2 + 1 if hotspot_capacity is None else hotspot_capacity
        self.tile = tile
        self.hotspot_share = hotspot_share
        self.max_span = max_span

        # pin-count distribution of small nets
        self.pin_counts = np.array([2, 3, 4])
        self.pin_weights = np.array([0.6, 0.3, 0.1])

    def hotspot(self, nx, ny):
        """Centre window covering half of each dimension."""
        return (nx // 4, ny // 4, nx - nx // 4 - 1, ny - ny // 4 - 1)

    def generate_pins(self, nx, ny, count, in_hotspot):
        if in_hotspot:
            x0, y0, x1, y1 = self.hotspot(nx, ny)
            xs = self.rng.integers(x0, x1 + 1, size=count)
            ys = self.rng.integers(y0, y1 + 1, size=count)
        else:
            cx, cy = self.rng.integers(0, nx), self.rng.integers(0, ny)
            xs = np.clip(cx + self.rng.integers(-self.max_span, self.max_span + 1, size=count), 0, nx - 1)
            ys = np.clip(cy + self.rng.integers(-self.max_span, self.max_span + 1, size=count), 0, ny - 1)
            xs[0], ys[0] = cx, cy
        return tuple((int(x), int(y), 0) for x, y in zip(xs, ys))

    def generate_adjustments(self, nx, ny, layers):
        x0, y0, x1, y1 = self.hotspot(nx, ny)
        adjustments = []
        for layer in range(layers):
            horizontal = layer % 2 == 0
            for x in range(x0, x1 + 1):
                for y in range(y0, y1 + 1):
                    b = (x + 1, y, layer) if horizontal else (x, y + 1, layer)
                    if (horizontal and x < x1) or (not horizontal and y < y1):
                        adjustments.append(CapacityAdjustment(make_edge((x, y, layer), b), self.hotspot_capacity))
        return tuple(adjustments)

    def generate_benchmark(self, n_nets, grid=(16, 16, 2), name="synthetic"):
        """
        Generate a benchmark with ``n_nets`` nets.

        Args:
            n_nets: Number of nets to generate
            grid: (X, Y, L) GCell grid; layer 1 is horizontal and directions alternate

        Returns:
            Benchmark ready for emit_benchmark
        """
        nx, ny, layers = grid
        if layers < 2:
            raise ValueError("at least two routing layers are required")
        vertical = tuple(0 if l % 2 == 0 else self.capacity for l in range(layers))
        horizontal = tuple(self.capacity if l % 2 == 0 else 0 for l in range(layers))

        nets = []
        for i in range(n_nets):
            count = int(self.rng.choice(self.pin_counts, p=self.pin_weights))
            in_hotspot = bool(self.rng.random() < self.hotspot_share)
            nets.append(BenchmarkNet(name=f"n{i}", number=i, pins=self.generate_pins(nx, ny, count, in_hotspot),
                                     min_width=None))

        return Benchmark(
            name=name,
            dims=(nx, ny, layers),
            vertical_capacity=vertical,
            horizontal_capacity=horizontal,
            min_width=(1,) * layers,
            min_spacing=(1,) * layers,
            via_spacing=(1,) * layers,
            origin=(0, 0),
            tile=(self.tile, self.tile),
            nets=tuple(nets),
            adjustments=self.generate_adjustments(nx, ny, layers),
        )

    def save_with_metadata(self, benchmark, output_path):
        """Save the benchmark with a metadata file."""
        output_path = Path(output_path)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        output_path.write_text(emit_benchmark(benchmark), encoding="utf-8")

        pin_counts = Counter(len(net.pins) for net in benchmark.nets)
        metadata = {
            'generated_at': datetime.now().isoformat(),
            'seed': self.seed,
            'grid': list(benchmark.dims),
            'n_nets': len(benchmark.nets),
            'pin_count_distribution': {str(k): v for k, v in sorted(pin_counts.items())},
            'capacity': self.capacity,
            'hotspot': {
                'window': list(self.hotspot(*benchmark.dims[:2])),
                'capacity': self.hotspot_capacity,
                'adjusted_edges': len(benchmark.adjustments),
            },
        }
        metadata_path = output_path.parent / f"{output_path.stem}_metadata.json"
        with open(metadata_path, 'w') as f:
            json.dump(metadata, f, indent=2)

        return output_path, metadata_path


def main():
    """CLI entry point."""
    parser = argparse.ArgumentParser(
        description='Generate a synthetic global-routing benchmark'
    )
    parser.add_argument(
        '--nets', '-n',
        type=int,
        default=100,
        help='Number of nets to generate (default: 100)'
    )
    parser.add_argument(
        '--grid', '-g',
        type=int,
        nargs=3,
        metavar=('X', 'Y', 'L'),
        default=[16, 16, 2],
        help='GCell grid size and layer count (default: 16 16 2)'
    )
    parser.add_argument(
        '--capacity', '-c',
        type=int,
        default=8,
        help='Tracks per edge outside the hotspot (default: 8)'
    )
    parser.add_argument(
        '--seed',
        type=int,
        help='Random seed for reproducibility'
    )
    parser.add_argument(
        '--out', '-o',
        type=str,
        default='data/benchmarks/synthetic.gr',
        help='Output benchmark path (default: data/benchmarks/synthetic.gr)'
    )

    args = parser.parse_args()

    generator = BenchmarkGenerator(seed=args.seed, capacity=args.capacity)
    benchmark = generator.generate_benchmark(args.nets, tuple(args.grid), name=Path(args.out).stem)
    main_file, meta_file = generator.save_with_metadata(benchmark, args.out)

    print(f"✓ Generated {len(benchmark.nets)} nets on a {'x'.join(map(str, benchmark.dims))} grid")
    print(f"✓ Saved to: {main_file}")
    print(f"✓ Metadata: {meta_file}")


if __name__ == '__main__':
    main()
