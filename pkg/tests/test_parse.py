"""Response parsing: extraction, taxonomy priority, adversarial inputs."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from tsp_eyeball.parse import (
    ALL_STATUSES,
    STATUS_INCOMPLETE,
    STATUS_INCORRECT_IDS,
    STATUS_UNPARSEABLE,
    STATUS_VALID,
    ParseOutcome,
    classify,
    extract_sequence,
    parse_response,
)
from tsp_eyeball.prompts import format_route_text
from tsp_eyeball.rng import Pcg32
from tsp_eyeball.solver import Route, canonicalize


# ---------------------------------------------------------------------------
# extraction

def test_extract_plain_sequence():
    assert extract_sequence("<<start>> 1 -> 2 -> 3 <<end>>") == [1, 2, 3]


def test_extract_comma_and_arrow_mix():
    assert extract_sequence("<<start>> 1 , 2 -> 3,4 <<end>>") == [1, 2, 3, 4]


def test_extract_uses_last_start_marker():
    text = (
        "The format is <<start>> 1 , 2 -> ... -> 1 <<end>>. "
        "Here is my answer: <<start>> 3 -> 1 -> 2 -> 3 <<end>>"
    )
    assert extract_sequence(text) == [3, 1, 2, 3]


def test_extract_first_end_after_last_start():
    text = "<<start>> 1 2 3 <<end>> trailing <<end>> 9"
    assert extract_sequence(text) == [1, 2, 3]


def test_extract_missing_start():
    out = extract_sequence("1 -> 2 -> 3 <<end>>")
    assert isinstance(out, ParseOutcome)
    assert out.status == STATUS_UNPARSEABLE
    assert "start" in out.detail


def test_extract_missing_end():
    out = extract_sequence("<<start>> 1 -> 2 -> 3")
    assert isinstance(out, ParseOutcome)
    assert out.status == STATUS_UNPARSEABLE


def test_extract_end_before_start_only():
    # the only <<end>> precedes the last <<start>>; nothing closes the answer
    out = extract_sequence("<<end>> 1 2 3 <<start>> 4 5 6")
    assert isinstance(out, ParseOutcome)
    assert out.status == STATUS_UNPARSEABLE


def test_extract_empty_span():
    out = extract_sequence("<<start>> no numbers <<end>>")
    assert isinstance(out, ParseOutcome)
    assert out.status == STATUS_UNPARSEABLE
    assert "integers" in out.detail


def test_extract_digits_inside_words():
    # any non-digit run separates tokens; letters do not protect digits
    assert extract_sequence("<<start>> node1 then node2 <<end>>") == [1, 2]


# ---------------------------------------------------------------------------
# classification taxonomy

def test_classify_valid_closed_form():
    out = classify([1, 2, 3, 4, 1], 4)
    assert out.status == STATUS_VALID
    assert out.route.order == (1, 2, 3, 4)
    assert out.raw_tokens == (1, 2, 3, 4, 1)


def test_classify_valid_open_form():
    out = classify([2, 3, 1, 4], 4)
    assert out.status == STATUS_VALID
    assert out.route == canonicalize([2, 3, 1, 4])


def test_classify_out_of_range():
    out = classify([1, 2, 5, 3], 4)
    assert out.status == STATUS_INCORRECT_IDS
    assert "outside" in out.detail
    assert out.route is None


def test_classify_zero_is_out_of_range():
    assert classify([0, 1, 2, 3], 3).status == STATUS_INCORRECT_IDS


def test_classify_duplicate():
    out = classify([1, 2, 2, 3, 4], 4)
    assert out.status == STATUS_INCORRECT_IDS
    assert "duplicate" in out.detail


def test_classify_priority_incorrect_over_incomplete():
    # missing 4 AND out-of-range 9: the ID error wins
    out = classify([1, 2, 9], 4)
    assert out.status == STATUS_INCORRECT_IDS


def test_classify_incomplete():
    out = classify([1, 2, 3], 5)
    assert out.status == STATUS_INCOMPLETE
    assert "[4, 5]" in out.detail


def test_classify_closing_repeat_not_a_duplicate():
    assert classify([3, 1, 2, 3], 3).status == STATUS_VALID


def test_classify_interior_repeat_is_duplicate():
    assert classify([1, 2, 1, 3], 3).status == STATUS_INCORRECT_IDS


def test_classify_single_token_closed_pair():
    # [5, 5] drops the repeat, leaving one in-range token and n-1 missing
    out = classify([5, 5], 5)
    assert out.status == STATUS_INCOMPLETE


def test_outcome_invariant_enforced():
    with pytest.raises(ValueError):
        ParseOutcome(STATUS_VALID, None, (), "")
    with pytest.raises(ValueError):
        ParseOutcome(STATUS_INCOMPLETE, Route((1, 2, 3)), (1, 2), "")


# ---------------------------------------------------------------------------
# end to end

def test_parse_response_valid():
    out = parse_response("Sure!\n<<start>> 1 -> 4 -> 2 -> 3 -> 1 <<end>>\nDone.", 4)
    assert out.status == STATUS_VALID
    assert out.route.order == (1, 3, 2, 4)


def test_parse_response_statuses_cover_taxonomy():
    cases = {
        "<<start>> 1 -> 2 -> 3 <<end>>": STATUS_VALID,
        "<<start>> 1 -> 2 -> 7 <<end>>": STATUS_INCORRECT_IDS,
        "<<start>> 1 -> 2 <<end>>": STATUS_INCOMPLETE,
        "I cannot see the image.": STATUS_UNPARSEABLE,
    }
    for text, expected in cases.items():
        assert parse_response(text, 3).status == expected
    assert set(cases.values()) == set(ALL_STATUSES)


def test_parse_response_newlines_between_tokens():
    out = parse_response("<<start>>\n1\n2\n3\n<<end>>", 3)
    assert out.status == STATUS_VALID


def test_parse_adversarial_marker_inside_answer():
    # a second full answer overrides an earlier one
    text = "<<start>> 1 2 3 <<end>> wait, better: <<start>> 1 3 2 <<end>>"
    out = parse_response(text, 3)
    assert out.status == STATUS_VALID
    assert out.raw_tokens == (1, 3, 2)


@given(st.integers(min_value=3, max_value=12), st.integers(min_value=0, max_value=10**6))
def test_round_trip_random_routes(n, seed):
    rng = Pcg32(seed)
    order = list(range(1, n + 1))
    rng.shuffle(order)
    route = Route(tuple(order))
    out = parse_response(format_route_text(route), n)
    assert out.status == STATUS_VALID
    assert out.route == canonicalize(order)


@given(st.text(max_size=200))
def test_parser_is_total(text):
    out = parse_response(text, 5)
    assert out.status in ALL_STATUSES
    assert (out.route is not None) == (out.status == STATUS_VALID)
