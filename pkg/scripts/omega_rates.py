"""Chamfer-oracle class-assignment rate of the procedural generator per guidance scale.

    python scripts/omega_rates.py --seeds 100 --omegas 0,0.3,3,30
"""

from __future__ import annotations

import argparse
import json
import sys

from tega.generation import ProceduralGenerator, chamfer_oracle
from tega.generation.core import GenerationRequest
from tega.generation.shapes import CLASS_BUILDERS


def assignment_rates(omegas, seeds: int = 100, num_points: int = 1024) -> dict[float, float]:
    """Fraction of seeds whose cloud the oracle assigns to the prompted class; class = seed mod vocabulary."""
    gen = ProceduralGenerator()
    names = list(CLASS_BUILDERS)
    rates = {}
    for w in omegas:
        hits = 0
        for s in range(seeds):
            name = names[s % len(names)]
            hits += chamfer_oracle(gen.generate(GenerationRequest(name, float(w), num_points, s))) == name
        rates[float(w)] = hits / seeds
    return rates


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--omegas", default="0,0.3,3,30")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--points", type=int, default=1024)
    args = p.parse_args(argv)
    omegas = [float(w) for w in args.omegas.split(",")]
    json.dump(assignment_rates(omegas, args.seeds, args.points), sys.stdout, indent=2)
    print()


if __name__ == "__main__":
    main()
