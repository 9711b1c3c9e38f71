"""Reference platform: a tiny deterministic foraging simulator.

Input schema::

    <refsim>
      <agents count="4" velocity="1.0" noise="0.0"/>
      <arena side="20"/>            <!-- optional: objects="N" -->
      <time ticks="2000"/>
      <seed value="42"/>
      <capture/>                    <!-- optional, added by --platform-vc -->
    </refsim>

Agents random-walk from a nest at the arena center, pick up the object in
their cell, and carry it home.  Outputs (in ``--output-dir``):

* ``collected.csv`` -- columns ``t,collected`` (cumulative retrievals), one row per tick
* ``spatial.<k>.csv`` -- cumulative agent cell-visit counts, taken every
  ``ticks // 10`` ticks

The model only exists to exercise the pipeline.  Imports are kept to the
stdlib so that process start-up stays cheap.
"""

from __future__ import annotations

import argparse
import math
import os
import random
import sys
import xml.etree.ElementTree as ET
from dataclasses import dataclass

N_SNAPSHOTS = 10


class SimConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    population: int
    velocity: float
    noise: float
    grid_side: int
    duration_ticks: int
    seed: int
    n_objects: int

    @classmethod
    def from_xml(cls, data: bytes) -> "SimConfig":
        try:
            root = ET.fromstring(data)
        except ET.ParseError as exc:
            raise SimConfigError(f"malformed XML: {exc}") from None
        if root.tag != "refsim":
            raise SimConfigError(f"root element must be <refsim>, got <{root.tag}>")

        def field(tag, attr, conv, default=None):
            node = root.find(tag)
            raw = node.get(attr) if node is not None else None
            if raw is None:
                if default is None:
                    raise SimConfigError(f"missing required <{tag} {attr}=...>")
                return default
            try:
                return conv(raw)
            except ValueError:
                raise SimConfigError(f"<{tag} {attr}={raw!r}> is not a valid {conv.__name__}") from None

        population = field("agents", "count", int)
        velocity = field("agents", "velocity", float)
        noise = field("agents", "noise", float, 0.0)
        side = field("arena", "side", int)
        ticks = field("time", "ticks", int)
        seed = field("seed", "value", int)
        if population < 1:
            raise SimConfigError("agents count must be a positive integer")
        if not velocity > 0:
            raise SimConfigError("agents velocity must be positive")
        if not 0.0 <= noise <= 1.0:
            raise SimConfigError("agents noise must lie in [0, 1]")
        if side < 3:
            raise SimConfigError("arena side must be >= 3")
        if ticks < 1:
            raise SimConfigError("time ticks must be >= 1")
        n_objects = field("arena", "objects", int, max(1, side * side // 8))
        return cls(population, velocity, noise, side, ticks, seed, n_objects)


def _random_cell(rng: random.Random, side: int, nest: tuple[int, int]) -> tuple[int, int]:
    while True:
        cell = (rng.randrange(side), rng.randrange(side))
        if cell != nest:
            return cell


def simulate(cfg: SimConfig):
    """Yield ``("tick", t, collected)`` and ``("snapshot", k, grid)`` events."""
    rng = random.Random(cfg.seed)
    side = cfg.grid_side
    cx = cy = side / 2.0
    nest_cell = (int(cx), int(cy))
    objects: set[tuple[int, int]] = set()
    while len(objects) < min(cfg.n_objects, side * side - 1):
        objects.add(_random_cell(rng, side, nest_cell))

    xs = [cx] * cfg.population
    ys = [cy] * cfg.population
    heading = [rng.uniform(-math.pi, math.pi) for _ in range(cfg.population)]
    carrying = [False] * cfg.population
    visits = [[0] * side for _ in range(side)]
    interval = max(1, cfg.duration_ticks // N_SNAPSHOTS)
    collected = 0
    k = 0
    top = side - 1e-9
    for t in range(1, cfg.duration_ticks + 1):
        for a in range(cfg.population):
            if carrying[a]:
                h = math.atan2(cy - ys[a], cx - xs[a])
            else:
                h = heading[a] + rng.uniform(-0.5, 0.5)
            h += cfg.noise * rng.uniform(-math.pi, math.pi)
            x = xs[a] + cfg.velocity * math.cos(h)
            y = ys[a] + cfg.velocity * math.sin(h)
            if not (0.0 <= x <= top and 0.0 <= y <= top):
                x = min(max(x, 0.0), top)
                y = min(max(y, 0.0), top)
                h += math.pi
            xs[a], ys[a], heading[a] = x, y, h
            cell = (int(x), int(y))
            visits[cell[1]][cell[0]] += 1
            if carrying[a]:
                if math.hypot(x - cx, y - cy) <= 1.0:
                    carrying[a] = False
                    collected += 1
            elif cell in objects:
                objects.discard(cell)
                carrying[a] = True
                objects.add(_random_cell(rng, side, nest_cell))
        yield ("tick", t, collected)
        if t % interval == 0 and k < N_SNAPSHOTS:
            yield ("snapshot", k, [row[:] for row in visits])
            k += 1


def run(cfg: SimConfig, output_dir: str) -> None:
    os.makedirs(output_dir, exist_ok=True)
    lines = ["t,collected"]
    for kind, idx, payload in simulate(cfg):
        if kind == "tick":
            lines.append(f"{idx},{payload}")
        else:
            header = ",".join(f"x{i}" for i in range(cfg.grid_side))
            body = "\n".join(",".join(str(v) for v in row) for row in payload)
            with open(os.path.join(output_dir, f"spatial.{idx}.csv"), "w", newline="\n") as fh:
                fh.write(header + "\n" + body + "\n")
    with open(os.path.join(output_dir, "collected.csv"), "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="refsim", description=__doc__.splitlines()[0])
    ap.add_argument("--input", required=True, help="input XML file")
    ap.add_argument("--seed", type=int, help="must match the seed in the input file if given")
    ap.add_argument("--output-dir", default="output")
    args = ap.parse_args(argv)
    try:
        with open(args.input, "rb") as fh:
            cfg = SimConfig.from_xml(fh.read())
    except OSError as exc:
        print(f"refsim: cannot read {args.input}: {exc.strerror}", file=sys.stderr)
        return 2
    except SimConfigError as exc:
        print(f"refsim: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None and args.seed != cfg.seed:
        print(f"refsim: --seed {args.seed} disagrees with input seed {cfg.seed}", file=sys.stderr)
        return 2
    run(cfg, args.output_dir)
    print(f"refsim: {cfg.duration_ticks} ticks, population {cfg.population}, seed {cfg.seed}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
