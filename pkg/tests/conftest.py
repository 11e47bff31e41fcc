"""Shared fixtures: tiny instances, fast render style, golden-file access."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from tsp_eyeball.instances import Instance, Point, generate_instance
from tsp_eyeball.render import RenderStyle
from tsp_eyeball.solver import brute_force_solve, solve_exact

GOLDEN_DIR = Path(__file__).parent / "golden"


def load_golden(name: str):
    path = GOLDEN_DIR / name
    if path.suffix == ".json":
        return json.loads(path.read_text(encoding="utf-8"))
    return path.read_text(encoding="utf-8")


def square_instance() -> Instance:
    pts = (Point(1, 0, 0), Point(2, 0, 1), Point(3, 1, 1), Point(4, 1, 0))
    return Instance("unit-square", 4, 0, pts)


@pytest.fixture(scope="session")
def fast_style() -> RenderStyle:
    return RenderStyle(canvas_px=256, marker_radius_px=4, label_font_px=7, route_stroke_px=2)


@pytest.fixture(scope="session")
def small_solved():
    """Five solved n=6 instances, enough for strategy plumbing tests."""
    out = []
    for idx in range(5):
        inst = generate_instance(6, 1000 + idx, f"n06i{idx:02d}")
        out.append(solve_exact(inst))
    return out


@pytest.fixture(scope="session")
def solved_n7():
    inst = generate_instance(7, 77, "n07fix")
    return solve_exact(inst)


@pytest.fixture(scope="session")
def brute_n6():
    inst = generate_instance(6, 66, "n06fix")
    return brute_force_solve(inst)
