"""Prompt bundle construction and the frozen task wordings."""

from __future__ import annotations

import numpy as np
import pytest

from tsp_eyeball.instances import generate_instance
from tsp_eyeball.parse import parse_response
from tsp_eyeball.prompts import (
    TEMPLATE_VERSION,
    Part,
    PromptBundle,
    build_few_shot_v1,
    build_few_shot_v2,
    build_refine_feedback,
    build_refine_initial_text,
    build_refine_initial_visual,
    build_zero_shot,
    bundle_sha256,
    format_route_text,
)
from tsp_eyeball.render import Image, encode_png
from tsp_eyeball.solver import Route
from tests.conftest import GOLDEN_DIR


# Frozen copies of the fully expanded task texts at n=10. These are kept
# verbatim and independent of the templates on purpose: any template edit
# must show up here as a failure, because recorded runs depend on the exact
# wording.
ZERO_SHOT_N10 = (
    "Inspect the above visualization of the TSP nodes and do the following:\n"
    "-1- Return a trip sequence based on your visual inspection only. "
    "The sequence should be enclosed within <<start>> and <<end>> markers.\n"
    "-2- Make sure to return the Hamiltonian circuit that passes by all "
    "10 points with IDs from 1 to 10."
)

FEW_SHOT_TASK_N10 = (
    "This task requires a solution for exactly 10 points that has IDs "
    "from 1 to 10. Your output must precisely follow this node count and IDs.\n"
    "-1- Strictly identify a Hamiltonian circuit for exactly 10 points. "
    "Ensure the path visits each point once and returns to the starting point.\n"
    "-2- Accurately sequence the circuit: List the IDs of these 10 points "
    "in the exact order they are visited, starting and ending at the same point.\n"
    "The sequence must contain only and exactly these 10 points, formatted "
    "as: <<start>> 1 , 2 -> ... -> 1 <<end>>. Include no additional points or IDs."
)

REFINE_FEEDBACK_N10 = (
    "The above visualization shows the TSP nodes together with a candidate route.\n"
    "-1- Inspect the drawn route and return a trip sequence with a shorter total "
    "traveling distance, based on your visual inspection only. The sequence should "
    "be enclosed within <<start>> and <<end>> markers.\n"
    "-2- Make sure to return the Hamiltonian circuit that passes by all "
    "10 points with IDs from 1 to 10."
)


def fake_image(tag: int) -> Image:
    pixels = np.full((4, 4, 3), tag % 256, dtype=np.uint8)
    return Image.from_png(encode_png(pixels))


# ---------------------------------------------------------------------------
# parts and bundles

def test_part_invariants():
    img = fake_image(1)
    with pytest.raises(ValueError):
        Part("text", text=None)
    with pytest.raises(ValueError):
        Part("text", text="x", image=img)
    with pytest.raises(ValueError):
        Part("image", image=None)
    with pytest.raises(ValueError):
        Part("audio", text="x")
    assert Part.from_text("x").kind == "text"
    assert Part.from_image(img).kind == "image"


def test_bundle_invariants():
    img = fake_image(2)
    with pytest.raises(ValueError):
        PromptBundle((), "zero_shot", 5)
    with pytest.raises(ValueError):
        PromptBundle((Part.from_image(img),), "zero_shot", 5)
    with pytest.raises(ValueError):
        PromptBundle((Part.from_text("t"),), "mystery", 5)


def test_template_version_is_stable():
    assert TEMPLATE_VERSION == 1


# ---------------------------------------------------------------------------
# zero shot

def test_zero_shot_structure_and_wording():
    img = fake_image(3)
    bundle = build_zero_shot(img, 10)
    assert bundle.strategy_tag == "zero_shot"
    assert [p.kind for p in bundle.parts] == ["image", "text"]
    assert bundle.parts[0].image is img
    assert bundle.parts[1].text == ZERO_SHOT_N10
    assert bundle.image_count() == 1


def test_zero_shot_n_substitution():
    text = build_zero_shot(fake_image(0), 25).parts[1].text
    assert "all 25 points with IDs from 1 to 25." in text
    assert "10" not in text


def test_refine_initial_visual_tag():
    bundle = build_refine_initial_visual(fake_image(4), 8)
    assert bundle.strategy_tag == "refine_init_visual"
    assert bundle.parts[1].text == build_zero_shot(fake_image(4), 8).parts[1].text


def test_zero_shot_rejects_tiny_n():
    with pytest.raises(ValueError):
        build_zero_shot(fake_image(0), 2)


# ---------------------------------------------------------------------------
# few shot

def test_few_shot_v1_layout():
    demos = [(fake_image(10), fake_image(11)), (fake_image(12), fake_image(13))]
    target = fake_image(14)
    bundle = build_few_shot_v1(demos, target, 10)
    kinds = [p.kind for p in bundle.parts]
    assert kinds == [
        "text", "text", "image", "text", "image",
        "text", "image", "text", "image",
        "text", "image", "text",
    ]
    assert bundle.image_count() == 2 * len(demos) + 1
    texts = bundle.text_parts()
    assert texts[0] == "Training Examples:"
    assert texts[1] == "Example 1 Input: "
    assert texts[2] == "Example 1 output: "
    assert texts[3] == "Example 2 Input: "
    assert texts[4] == "Example 2 output: "
    assert texts[5] == "The New Problem: "
    assert texts[6] == FEW_SHOT_TASK_N10
    assert bundle.parts[-2].image is target


def test_few_shot_v2_layout():
    route_text = format_route_text(Route((1, 2, 3, 4, 5)))
    demos = [(fake_image(20), route_text)]
    bundle = build_few_shot_v2(demos, fake_image(21), 10)
    assert bundle.image_count() == len(demos) + 1
    texts = bundle.text_parts()
    assert texts[1] == "Example 1 Input: "
    assert texts[2] == f"Example 1 output: {route_text}"
    assert texts[-1] == FEW_SHOT_TASK_N10
    assert bundle.strategy_tag == "few_shot_v2"


def test_few_shot_v2_rejects_unparseable_demo():
    with pytest.raises(ValueError):
        build_few_shot_v2([(fake_image(0), "no markers here")], fake_image(1), 10)


def test_few_shot_requires_demos():
    with pytest.raises(ValueError):
        build_few_shot_v1([], fake_image(0), 10)
    with pytest.raises(ValueError):
        build_few_shot_v2([], fake_image(0), 10)


# ---------------------------------------------------------------------------
# refine prompts

def test_refine_feedback_wording():
    bundle = build_refine_feedback(fake_image(30), 10)
    assert [p.kind for p in bundle.parts] == ["image", "text"]
    assert bundle.parts[1].text == REFINE_FEEDBACK_N10
    assert bundle.strategy_tag == "refine_feedback"


def test_refine_initial_text_golden():
    inst = generate_instance(5, 42)
    bundle = build_refine_initial_text(inst)
    assert bundle.image_count() == 0
    assert bundle.strategy_tag == "refine_init_text"
    expected = (GOLDEN_DIR / "refine_init_prompt.txt").read_text()
    assert bundle.parts[0].text + "\n" == expected


def test_refine_initial_text_lists_every_point():
    inst = generate_instance(7, 9)
    text = build_refine_initial_text(inst).parts[0].text
    for p in inst.points:
        assert f"{p.id}: ({p.x:g}, {p.y:g})" in text


# ---------------------------------------------------------------------------
# answer formatting

def test_format_route_text_closed_form():
    assert format_route_text(Route((1, 3, 2, 4))) == "<<start>> 1 -> 3 -> 2 -> 4 -> 1 <<end>>"


def test_format_route_round_trips_through_parser():
    route = Route((2, 4, 1, 3, 5))
    outcome = parse_response(format_route_text(route), 5)
    assert outcome.status == "valid"
    # parser canonicalizes; same cycle either way
    assert outcome.route.order == (1, 3, 5, 2, 4)


# ---------------------------------------------------------------------------
# digests

def test_bundle_sha256_sensitivity():
    a = build_zero_shot(fake_image(1), 10)
    b = build_zero_shot(fake_image(1), 10)
    c = build_zero_shot(fake_image(2), 10)
    d = build_zero_shot(fake_image(1), 11)
    assert bundle_sha256(a) == bundle_sha256(b)
    assert bundle_sha256(a) != bundle_sha256(c)
    assert bundle_sha256(a) != bundle_sha256(d)
