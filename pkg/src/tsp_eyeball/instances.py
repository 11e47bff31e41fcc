"""Random journey generation, validation, and JSON persistence.

An instance is a set of n labelled nodes with integer coordinates drawn
uniformly from the [0, 100] x [0, 100] grid, duplicates rejected, IDs
assigned 1..n in draw order. Instance seeds are derived from the dataset
master seed and the (size, index) position, so any single instance can be
regenerated without replaying the whole dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .rng import Pcg32, derive_seed

SCHEMA_VERSION = 1
COORD_MAX = 100
MIN_NODES = 3


class DatasetError(ValueError):
    """A dataset file or in-memory instance failed validation."""


@dataclass(frozen=True)
class Point:
    id: int
    x: int
    y: int


@dataclass(frozen=True)
class Instance:
    instance_id: str
    n: int
    seed: int
    points: tuple[Point, ...]

    def coords(self) -> dict[int, tuple[int, int]]:
        return {p.id: (p.x, p.y) for p in self.points}


@dataclass(frozen=True)
class Dataset:
    seed: int
    sizes: tuple[int, ...]
    per_size_count: int
    instances: tuple[Instance, ...]

    def by_id(self) -> dict[str, Instance]:
        return {inst.instance_id: inst for inst in self.instances}


def validate_instance(instance: Instance) -> None:
    """Raise DatasetError unless IDs are exactly 1..n and coordinates are unique."""
    if instance.n < MIN_NODES:
        raise DatasetError(f"{instance.instance_id}: n={instance.n} is below the minimum of {MIN_NODES}")
    if len(instance.points) != instance.n:
        raise DatasetError(
            f"{instance.instance_id}: expected {instance.n} points, found {len(instance.points)}"
        )
    ids = [p.id for p in instance.points]
    if sorted(ids) != list(range(1, instance.n + 1)):
        raise DatasetError(f"{instance.instance_id}: point IDs are not exactly 1..{instance.n}")
    coords = {(p.x, p.y) for p in instance.points}
    if len(coords) != instance.n:
        raise DatasetError(f"{instance.instance_id}: duplicate point coordinates")


def generate_instance(n: int, seed: int, instance_id: str | None = None) -> Instance:
    """Generate one instance with n unique integer-grid points.

    Duplicate coordinate draws are rejected and redrawn, so every pairwise
    distance is strictly positive.
    """
    if n < MIN_NODES:
        raise ValueError(f"n must be at least {MIN_NODES}, got {n}")
    if n > (COORD_MAX + 1) ** 2:
        raise ValueError(f"cannot place {n} unique points on a {COORD_MAX + 1}^2 grid")
    rng = Pcg32(seed)
    seen: set[tuple[int, int]] = set()
    points: list[Point] = []
    while len(points) < n:
        x = rng.randint(0, COORD_MAX)
        y = rng.randint(0, COORD_MAX)
        if (x, y) in seen:
            continue
        seen.add((x, y))
        points.append(Point(len(points) + 1, x, y))
    if instance_id is None:
        instance_id = f"n{n:02d}s{seed & ((1 << 64) - 1):016x}"
    instance = Instance(instance_id, n, seed, tuple(points))
    validate_instance(instance)
    return instance


def generate_dataset(sizes: list[int], per_size_count: int, seed: int) -> Dataset:
    """Generate len(sizes) * per_size_count instances, grouped by size.

    Child seeds come from derive_seed(seed, size, index); regeneration with
    the same arguments is byte-for-byte identical.
    """
    if not sizes:
        raise ValueError("sizes must be non-empty")
    if len(set(sizes)) != len(sizes):
        raise ValueError("sizes must be distinct")
    if any(s < MIN_NODES for s in sizes):
        raise ValueError(f"every size must be at least {MIN_NODES}")
    if per_size_count < 1:
        raise ValueError("per_size_count must be at least 1")
    instances: list[Instance] = []
    for size in sizes:
        for index in range(per_size_count):
            child = derive_seed(seed, size, index)
            instances.append(generate_instance(size, child, f"n{size:02d}i{index:02d}"))
    return Dataset(seed, tuple(sizes), per_size_count, tuple(instances))


def _dataset_dict(dataset: Dataset) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "seed": dataset.seed,
        "sizes": list(dataset.sizes),
        "per_size_count": dataset.per_size_count,
        "instances": [
            {
                "instance_id": inst.instance_id,
                "n": inst.n,
                "seed": inst.seed,
                "points": [{"id": p.id, "x": p.x, "y": p.y} for p in inst.points],
            }
            for inst in dataset.instances
        ],
    }


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    Path(path).write_text(json.dumps(_dataset_dict(dataset), indent=2) + "\n", encoding="utf-8")


def load_dataset(path: str | Path) -> Dataset:
    """Load and fully validate a dataset file.

    Truncated or non-JSON input, a schema version mismatch, and any invariant
    violation (bad IDs, duplicate coordinates, wrong counts) all raise
    DatasetError.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict) or data.get("schema") != SCHEMA_VERSION:
        raise DatasetError(f"{path}: missing or unsupported schema version")
    try:
        instances = tuple(
            Instance(
                entry["instance_id"],
                entry["n"],
                entry["seed"],
                tuple(Point(p["id"], p["x"], p["y"]) for p in entry["points"]),
            )
            for entry in data["instances"]
        )
        dataset = Dataset(data["seed"], tuple(data["sizes"]), data["per_size_count"], instances)
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"{path}: malformed dataset structure ({exc})") from exc
    for inst in dataset.instances:
        validate_instance(inst)
    expected = len(dataset.sizes) * dataset.per_size_count
    if len(dataset.instances) != expected:
        raise DatasetError(f"{path}: expected {expected} instances, found {len(dataset.instances)}")
    ids = [inst.instance_id for inst in dataset.instances]
    if len(set(ids)) != len(ids):
        raise DatasetError(f"{path}: duplicate instance IDs")
    return dataset
