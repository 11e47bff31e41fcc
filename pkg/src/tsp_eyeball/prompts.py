"""Prompt construction for the visual tour task.

The zero-shot and few-shot task texts are fixed templates (the only runtime
substitution is the node count); the in-context scaffolds interleave header
texts with demonstration images exactly as the builders below lay them out.
Changing any template is a breaking change to recorded runs, which is why
``TEMPLATE_VERSION`` is stamped into every run manifest.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

from .instances import Instance
from .render import Image
from .solver import Route

TEMPLATE_VERSION = 1

ZERO_SHOT_TEMPLATE = (
    "Inspect the above visualization of the TSP nodes and do the following:\n"
    "-1- Return a trip sequence based on your visual inspection only. "
    "The sequence should be enclosed within <<start>> and <<end>> markers.\n"
    "-2- Make sure to return the Hamiltonian circuit that passes by all "
    "{num_nodes} points with IDs from 1 to {num_nodes}."
)

FEW_SHOT_TASK_TEMPLATE = (
    "This task requires a solution for exactly {num_nodes} points that has IDs "
    "from 1 to {num_nodes}. Your output must precisely follow this node count and IDs.\n"
    "-1- Strictly identify a Hamiltonian circuit for exactly {num_nodes} points. "
    "Ensure the path visits each point once and returns to the starting point.\n"
    "-2- Accurately sequence the circuit: List the IDs of these {num_nodes} points "
    "in the exact order they are visited, starting and ending at the same point.\n"
    "The sequence must contain only and exactly these {num_nodes} points, formatted "
    "as: <<start>> 1 , 2 -> ... -> 1 <<end>>. Include no additional points or IDs."
)

REFINE_INITIAL_TEXT_TEMPLATE = (
    "You are given {num_nodes} TSP nodes as `id: (x, y)` coordinate pairs:\n"
    "{point_lines}\n"
    "Return a trip sequence for the Hamiltonian circuit that passes by all "
    "{num_nodes} points with IDs from 1 to {num_nodes}. The sequence should be "
    "enclosed within <<start>> and <<end>> markers."
)

REFINE_FEEDBACK_TEMPLATE = (
    "The above visualization shows the TSP nodes together with a candidate route.\n"
    "-1- Inspect the drawn route and return a trip sequence with a shorter total "
    "traveling distance, based on your visual inspection only. The sequence should "
    "be enclosed within <<start>> and <<end>> markers.\n"
    "-2- Make sure to return the Hamiltonian circuit that passes by all "
    "{num_nodes} points with IDs from 1 to {num_nodes}."
)

TRAINING_HEADER = "Training Examples:"
NEW_PROBLEM_HEADER = "The New Problem: "

STRATEGY_TAGS = (
    "zero_shot",
    "few_shot_v1",
    "few_shot_v2",
    "refine_init_text",
    "refine_init_visual",
    "refine_feedback",
)


@dataclass(frozen=True)
class Part:
    kind: str
    text: str | None = None
    image: Image | None = None

    def __post_init__(self) -> None:
        if self.kind == "text":
            if self.text is None or self.image is not None:
                raise ValueError("text part must carry text and nothing else")
        elif self.kind == "image":
            if self.image is None or self.text is not None:
                raise ValueError("image part must carry an image and nothing else")
        else:
            raise ValueError(f"unknown part kind {self.kind!r}")

    @classmethod
    def from_text(cls, text: str) -> "Part":
        return cls("text", text=text)

    @classmethod
    def from_image(cls, image: Image) -> "Part":
        return cls("image", image=image)


@dataclass(frozen=True)
class PromptBundle:
    parts: tuple[Part, ...]
    strategy_tag: str
    n: int

    def __post_init__(self) -> None:
        if not self.parts:
            raise ValueError("bundle needs at least one part")
        if self.parts[-1].kind != "text":
            raise ValueError("the final part must be the task text")
        if self.strategy_tag not in STRATEGY_TAGS:
            raise ValueError(f"unknown strategy tag {self.strategy_tag!r}")

    def image_count(self) -> int:
        return sum(1 for p in self.parts if p.kind == "image")

    def text_parts(self) -> list[str]:
        return [p.text for p in self.parts if p.kind == "text"]


def bundle_sha256(bundle: PromptBundle) -> str:
    """Content digest over part kinds, texts, and image digests."""
    h = hashlib.sha256()
    h.update(f"{bundle.strategy_tag}|{bundle.n}".encode("utf-8"))
    for part in bundle.parts:
        if part.kind == "text":
            h.update(b"\x00T" + part.text.encode("utf-8"))
        else:
            h.update(b"\x00I" + part.image.sha256.encode("ascii"))
    return h.hexdigest()


def format_route_text(route: Route) -> str:
    """Closed-form answer text: `<<start>> a1 -> ... -> an -> a1 <<end>>`."""
    ids = list(route.order) + [route.order[0]]
    return "<<start>> " + " -> ".join(str(i) for i in ids) + " <<end>>"


def _check_route_text(text: str) -> None:
    # deferred import; parse pulls in solver but not this module
    from .parse import extract_sequence

    if not isinstance(extract_sequence(text), list):
        raise ValueError(f"demo route text is not parseable: {text!r}")


def build_zero_shot(points_image: Image, n: int, strategy_tag: str = "zero_shot") -> PromptBundle:
    """[node image, task text]; the model answers from the picture alone."""
    if n < 3:
        raise ValueError("n must be at least 3")
    parts = (
        Part.from_image(points_image),
        Part.from_text(ZERO_SHOT_TEMPLATE.format(num_nodes=n)),
    )
    return PromptBundle(parts, strategy_tag, n)


def build_refine_initial_visual(points_image: Image, n: int) -> PromptBundle:
    """Zero-shot bundle tagged as the visual starting draw of a refine loop."""
    return build_zero_shot(points_image, n, strategy_tag="refine_init_visual")


def build_few_shot_v1(
    demos: Sequence[tuple[Image, Image]], target_image: Image, n: int
) -> PromptBundle:
    """Demos as image pairs: each problem image followed by its solution image."""
    if n < 3:
        raise ValueError("n must be at least 3")
    if not demos:
        raise ValueError("need at least one demo")
    parts: list[Part] = [Part.from_text(TRAINING_HEADER)]
    for k, (input_image, solution_image) in enumerate(demos, start=1):
        parts.append(Part.from_text(f"Example {k} Input: "))
        parts.append(Part.from_image(input_image))
        parts.append(Part.from_text(f"Example {k} output: "))
        parts.append(Part.from_image(solution_image))
    parts.append(Part.from_text(NEW_PROBLEM_HEADER))
    parts.append(Part.from_image(target_image))
    parts.append(Part.from_text(FEW_SHOT_TASK_TEMPLATE.format(num_nodes=n)))
    return PromptBundle(tuple(parts), "few_shot_v1", n)


def build_few_shot_v2(
    demos: Sequence[tuple[Image, str]], target_image: Image, n: int
) -> PromptBundle:
    """Demos as image/answer-text pairs; same scaffold as v1 otherwise."""
    if n < 3:
        raise ValueError("n must be at least 3")
    if not demos:
        raise ValueError("need at least one demo")
    for _, route_text in demos:
        _check_route_text(route_text)
    parts: list[Part] = [Part.from_text(TRAINING_HEADER)]
    for k, (input_image, route_text) in enumerate(demos, start=1):
        parts.append(Part.from_text(f"Example {k} Input: "))
        parts.append(Part.from_image(input_image))
        parts.append(Part.from_text(f"Example {k} output: {route_text}"))
    parts.append(Part.from_text(NEW_PROBLEM_HEADER))
    parts.append(Part.from_image(target_image))
    parts.append(Part.from_text(FEW_SHOT_TASK_TEMPLATE.format(num_nodes=n)))
    return PromptBundle(tuple(parts), "few_shot_v2", n)


def _format_coord(v: float) -> str:
    return f"{v:g}"


def build_refine_initial_text(instance: Instance) -> PromptBundle:
    """Text-only bundle listing every point; no image is shown."""
    lines = "\n".join(
        f"{p.id}: ({_format_coord(p.x)}, {_format_coord(p.y)})"
        for p in sorted(instance.points, key=lambda p: p.id)
    )
    text = REFINE_INITIAL_TEXT_TEMPLATE.format(num_nodes=instance.n, point_lines=lines)
    return PromptBundle((Part.from_text(text),), "refine_init_text", instance.n)


def build_refine_feedback(route_image: Image, n: int) -> PromptBundle:
    """[current-route image, improvement request]."""
    if n < 3:
        raise ValueError("n must be at least 3")
    parts = (
        Part.from_image(route_image),
        Part.from_text(REFINE_FEEDBACK_TEMPLATE.format(num_nodes=n)),
    )
    return PromptBundle(parts, "refine_feedback", n)
