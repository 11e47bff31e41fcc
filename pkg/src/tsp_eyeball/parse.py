"""Route extraction from model responses and failure classification.

Answers are expected between `<<start>>` and `<<end>>` markers. Extraction
takes the span between the LAST `<<start>>` and the first `<<end>>` after
it, because models often restate the requested format before answering.
Any non-digit characters separate integer tokens, so `1 , 2 -> 3` and bare
whitespace lists parse alike.

Failure taxonomy (one status per response, priority order):

* IncorrectNodeIds: some token outside 1..n, or a duplicate after dropping
  the optional closing repeat of the first token.
* IncompleteRoute: tokens in-range and distinct but missing some ID.
* Unparseable: markers absent or out of order, or no integers between them.

Open-form answers (not repeating the start node) count as Valid; the
closing edge is implicit.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .solver import Route, canonicalize

START_MARKER = "<<start>>"
END_MARKER = "<<end>>"

STATUS_VALID = "valid"
STATUS_INCORRECT_IDS = "incorrect_node_ids"
STATUS_INCOMPLETE = "incomplete_route"
STATUS_UNPARSEABLE = "unparseable"

FAILURE_STATUSES = (STATUS_INCORRECT_IDS, STATUS_INCOMPLETE, STATUS_UNPARSEABLE)
ALL_STATUSES = (STATUS_VALID,) + FAILURE_STATUSES

_INT_RE = re.compile(r"\d+")


@dataclass(frozen=True)
class ParseOutcome:
    status: str
    route: Route | None
    raw_tokens: tuple[int, ...]
    detail: str

    def __post_init__(self) -> None:
        if (self.status == STATUS_VALID) != (self.route is not None):
            raise ValueError("route must be present exactly when status is valid")


def _unparseable(detail: str, tokens: tuple[int, ...] = ()) -> ParseOutcome:
    return ParseOutcome(STATUS_UNPARSEABLE, None, tokens, detail)


def extract_sequence(text: str, n: int | None = None) -> list[int] | ParseOutcome:
    """Integer tokens between the markers, or an Unparseable outcome.

    ``n`` is unused during extraction; it is accepted so call sites can pass
    their full context through uniformly.
    """
    start = text.rfind(START_MARKER)
    if start < 0:
        return _unparseable("no <<start>> marker")
    end = text.find(END_MARKER, start + len(START_MARKER))
    if end < 0:
        return _unparseable("no <<end>> marker after the last <<start>>")
    span = text[start + len(START_MARKER) : end]
    tokens = [int(t) for t in _INT_RE.findall(span)]
    if not tokens:
        return _unparseable("no integers between the markers")
    return tokens


def classify(tokens: list[int], n: int) -> ParseOutcome:
    """Map a token list onto the taxonomy; IncorrectNodeIds wins over IncompleteRoute."""
    raw = tuple(tokens)
    work = list(tokens)
    if len(work) >= 2 and work[-1] == work[0]:
        work.pop()  # closing repeat of the start node
    out_of_range = sorted({t for t in work if not 1 <= t <= n})
    seen: set[int] = set()
    duplicates_set: set[int] = set()
    for t in work:
        (duplicates_set if t in seen else seen).add(t)
    duplicates = sorted(duplicates_set)
    if out_of_range or duplicates:
        reasons = []
        if out_of_range:
            reasons.append(f"IDs outside 1..{n}: {out_of_range}")
        if duplicates:
            reasons.append(f"duplicate IDs: {duplicates}")
        return ParseOutcome(STATUS_INCORRECT_IDS, None, raw, "; ".join(reasons))
    missing = sorted(set(range(1, n + 1)) - set(work))
    if missing:
        return ParseOutcome(STATUS_INCOMPLETE, None, raw, f"missing IDs: {missing}")
    return ParseOutcome(STATUS_VALID, canonicalize(work), raw, "")


def parse_response(text: str, n: int) -> ParseOutcome:
    """extract_sequence composed with classify; total over all strings."""
    extracted = extract_sequence(text, n)
    if isinstance(extracted, ParseOutcome):
        return extracted
    return classify(extracted, n)
