"""Benchmark harness for eyeballing TSP tours with multimodal chat models."""

from .instances import Dataset, Instance, Point, generate_dataset, generate_instance
from .metrics import GapStats, RunRecord, gap_percent, summarize
from .parse import ParseOutcome, parse_response
from .render import Image, RenderStyle, render_points, render_route
from .solver import Route, SolvedInstance, brute_force_solve, solve_exact, tour_length

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GapStats",
    "Image",
    "Instance",
    "ParseOutcome",
    "Point",
    "RenderStyle",
    "Route",
    "RunRecord",
    "SolvedInstance",
    "brute_force_solve",
    "gap_percent",
    "generate_dataset",
    "generate_instance",
    "parse_response",
    "render_points",
    "render_route",
    "solve_exact",
    "summarize",
    "tour_length",
    "__version__",
]
