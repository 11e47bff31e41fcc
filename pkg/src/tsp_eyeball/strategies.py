"""The five evaluation protocols.

Single-shot: zero-shot and the two few-shot variants (one attempt per
instance). Self-ensemble: k independent zero-shot draws, best-of-first-S
selection for each ensemble size S. Self-refine: an initial route (from a
text-only point listing in variant one, from a zero-shot visual attempt in
variant two) followed by a fixed number of visual feedback iterations, each
showing the model its current route drawn on the map.

Refine rules that matter for bookkeeping: a hallucinated feedback reply
keeps the current route unchanged (the loop must always hold a renderable
route); the reported best is the minimum-length Valid candidate over the
whole trace including the initial one, earliest winner on ties; if the
initial phase never yields a Valid route within the retry cap, the trace is
marked failed and excluded from gap statistics.

Draw indices count every backend call within one strategy execution on one
instance, starting at zero, so transcripts replay unambiguously.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from .backend import Backend, CompletionContext, RawResponse, STATUS_OK
from .instances import Instance
from .metrics import RunRecord, gap_percent
from .parse import ParseOutcome, parse_response, STATUS_UNPARSEABLE, STATUS_VALID
from .prompts import (
    PromptBundle,
    build_few_shot_v1,
    build_few_shot_v2,
    build_refine_feedback,
    build_refine_initial_text,
    build_refine_initial_visual,
    build_zero_shot,
    format_route_text,
)
from .render import Image, RenderStyle, render_points, render_route
from .solver import Route, SolvedInstance, tour_length

STRATEGY_ZERO_SHOT = "zero-shot"
STRATEGY_FEW_SHOT_V1 = "few-shot-v1"
STRATEGY_FEW_SHOT_V2 = "few-shot-v2"
STRATEGY_ENSEMBLE = "ensemble"
STRATEGY_REFINE_1 = "refine-1"
STRATEGY_REFINE_2 = "refine-2"
ALL_STRATEGIES = (
    STRATEGY_ZERO_SHOT,
    STRATEGY_FEW_SHOT_V1,
    STRATEGY_FEW_SHOT_V2,
    STRATEGY_ENSEMBLE,
    STRATEGY_REFINE_1,
    STRATEGY_REFINE_2,
)

DEFAULT_ENSEMBLE_K = 13
DEFAULT_ENSEMBLE_SIZES = (3, 5, 7, 9, 11, 13)
DEFAULT_REFINE_ITERS = 10
DEFAULT_DEMO_COUNT = 3
INITIAL_RETRY_CAP = 3

ImageSink = Callable[[str, str, Image], None]


@dataclass(frozen=True)
class Attempt:
    bundle_tag: str
    raw: RawResponse
    outcome: ParseOutcome
    length: float | None
    gap_percent: float | None

    @property
    def is_valid(self) -> bool:
        return self.outcome.status == STATUS_VALID


@dataclass(frozen=True)
class PrefixSelection:
    ensemble_size: int
    best_route: Route | None
    best_length: float | None
    gap_percent: float | None
    valid_count: int


@dataclass(frozen=True)
class EnsembleResult:
    instance_id: str
    attempts: tuple[Attempt, ...]
    per_size: dict[int, PrefixSelection]


@dataclass(frozen=True)
class RefineStep:
    iteration: int
    attempt: Attempt
    current_route: Route


@dataclass(frozen=True)
class RefineTrace:
    variant: str
    instance_id: str
    initial_attempts: tuple[Attempt, ...]
    initial_route: Route | None
    steps: tuple[RefineStep, ...]
    failed: bool
    best_route: Route | None
    best_length: float | None
    best_gap_percent: float | None
    image_tags: tuple[str, ...]


def evaluate_response(
    response: RawResponse, instance: Instance, solved: SolvedInstance, bundle_tag: str
) -> Attempt:
    """Parse one response and score it against the optimum."""
    if response.transport_status != STATUS_OK:
        outcome = ParseOutcome(STATUS_UNPARSEABLE, None, (), f"transport: {response.transport_status}")
        return Attempt(bundle_tag, response, outcome, None, None)
    outcome = parse_response(response.text, instance.n)
    if outcome.status != STATUS_VALID:
        return Attempt(bundle_tag, response, outcome, None, None)
    length = tour_length(outcome.route, instance)
    return Attempt(bundle_tag, response, outcome, length, gap_percent(length, solved.optimal_length))


def _sink(image_sink: ImageSink | None, instance_id: str, tag: str, image: Image) -> None:
    if image_sink is not None:
        image_sink(instance_id, tag, image)


def run_zero_shot(
    instance: Instance,
    solved: SolvedInstance,
    backend: Backend,
    style: RenderStyle | None = None,
    image_sink: ImageSink | None = None,
    draw_index: int = 0,
) -> Attempt:
    points = render_points(instance, style)
    _sink(image_sink, instance.instance_id, "points", points)
    bundle = build_zero_shot(points, instance.n)
    context = CompletionContext(instance.instance_id, draw_index, bundle.strategy_tag)
    response = backend.complete(bundle, context)
    return evaluate_response(response, instance, solved, bundle.strategy_tag)


def select_demos(
    solved_in_order: Sequence[SolvedInstance], target_id: str, count: int = DEFAULT_DEMO_COUNT
) -> list[SolvedInstance]:
    """First ``count`` solved instances of the target's size, target excluded."""
    target = next((s for s in solved_in_order if s.instance.instance_id == target_id), None)
    if target is None:
        raise ValueError(f"target {target_id!r} not among solved instances")
    demos = [
        s
        for s in solved_in_order
        if s.instance.n == target.instance.n and s.instance.instance_id != target_id
    ][:count]
    if len(demos) < count:
        raise ValueError(
            f"need {count} demos of size {target.instance.n}, only {len(demos)} available"
        )
    return demos


def run_few_shot(
    instance: Instance,
    solved: SolvedInstance,
    demos: Sequence[SolvedInstance],
    backend: Backend,
    variant: str,
    style: RenderStyle | None = None,
    image_sink: ImageSink | None = None,
    draw_index: int = 0,
) -> Attempt:
    if variant not in ("v1", "v2"):
        raise ValueError(f"variant must be v1 or v2, got {variant!r}")
    if any(d.instance.instance_id == instance.instance_id for d in demos):
        raise ValueError("demos must exclude the target instance")
    target_image = render_points(instance, style)
    _sink(image_sink, instance.instance_id, "points", target_image)
    if variant == "v1":
        pairs = [
            (render_points(d.instance, style), render_route(d.instance, d.optimal_route, style))
            for d in demos
        ]
        bundle = build_few_shot_v1(pairs, target_image, instance.n)
    else:
        pairs_v2 = [
            (render_points(d.instance, style), format_route_text(d.optimal_route)) for d in demos
        ]
        bundle = build_few_shot_v2(pairs_v2, target_image, instance.n)
    context = CompletionContext(instance.instance_id, draw_index, bundle.strategy_tag)
    response = backend.complete(bundle, context)
    return evaluate_response(response, instance, solved, bundle.strategy_tag)


def run_self_ensemble(
    instance: Instance,
    solved: SolvedInstance,
    backend: Backend,
    k: int = DEFAULT_ENSEMBLE_K,
    sizes: Sequence[int] = DEFAULT_ENSEMBLE_SIZES,
    style: RenderStyle | None = None,
    image_sink: ImageSink | None = None,
) -> EnsembleResult:
    """k zero-shot draws, then best-of-first-S selection per ensemble size."""
    sizes = tuple(sorted(sizes))
    if not sizes or k < sizes[-1]:
        raise ValueError(f"k={k} must cover the largest ensemble size {sizes[-1] if sizes else '?'}")
    points = render_points(instance, style)
    _sink(image_sink, instance.instance_id, "points", points)
    bundle = build_zero_shot(points, instance.n)

    def one(draw: int) -> RawResponse:
        return backend.complete(
            bundle, CompletionContext(instance.instance_id, draw, bundle.strategy_tag)
        )

    # concurrent draws; list() preserves submission order, so "first S" is stable
    with ThreadPoolExecutor(max_workers=min(k, DEFAULT_ENSEMBLE_K)) as pool:
        responses = list(pool.map(one, range(k)))
    attempts = tuple(
        evaluate_response(r, instance, solved, bundle.strategy_tag) for r in responses
    )
    per_size: dict[int, PrefixSelection] = {}
    for size in sizes:
        prefix = attempts[:size]
        valid = [a for a in prefix if a.is_valid]
        if valid:
            best = min(valid, key=lambda a: a.length)
            per_size[size] = PrefixSelection(
                size, best.outcome.route, best.length, best.gap_percent, len(valid)
            )
        else:
            per_size[size] = PrefixSelection(size, None, None, None, 0)
    return EnsembleResult(instance.instance_id, attempts, per_size)


def _refine_initial_phase(
    variant: str,
    instance: Instance,
    solved: SolvedInstance,
    backend: Backend,
    counter: "itertools.count[int]",
    style: RenderStyle | None,
    image_sink: ImageSink | None,
    retry_cap: int,
) -> tuple[list[Attempt], Route | None]:
    attempts: list[Attempt] = []
    for _ in range(retry_cap):
        if variant == "one":
            bundle = build_refine_initial_text(instance)
        else:
            points = render_points(instance, style)
            _sink(image_sink, instance.instance_id, "points", points)
            bundle = build_refine_initial_visual(points, instance.n)
        context = CompletionContext(instance.instance_id, next(counter), bundle.strategy_tag)
        response = backend.complete(bundle, context)
        attempt = evaluate_response(response, instance, solved, bundle.strategy_tag)
        attempts.append(attempt)
        if attempt.is_valid:
            return attempts, attempt.outcome.route
    return attempts, None


def _run_refine(
    variant: str,
    instance: Instance,
    solved: SolvedInstance,
    initial_backend: Backend,
    vision_backend: Backend,
    iters: int,
    style: RenderStyle | None,
    image_sink: ImageSink | None,
    initial_retry_cap: int,
) -> RefineTrace:
    if iters < 1:
        raise ValueError("iters must be at least 1")
    counter = itertools.count()
    initial_attempts, initial_route = _refine_initial_phase(
        variant, instance, solved, initial_backend, counter, style, image_sink, initial_retry_cap
    )
    if initial_route is None:
        return RefineTrace(
            variant, instance.instance_id, tuple(initial_attempts), None, (), True,
            None, None, None, (),
        )
    # candidates in arrival order; min() keeps the earliest on equal lengths
    candidates: list[tuple[float, Route]] = [(tour_length(initial_route, instance), initial_route)]
    current = initial_route
    steps: list[RefineStep] = []
    image_tags: list[str] = []
    for iteration in range(1, iters + 1):
        route_image = render_route(instance, current, style)
        tag = f"refine_iter{iteration:02d}"
        _sink(image_sink, instance.instance_id, tag, route_image)
        image_tags.append(tag)
        bundle = build_refine_feedback(route_image, instance.n)
        context = CompletionContext(instance.instance_id, next(counter), bundle.strategy_tag)
        response = vision_backend.complete(bundle, context)
        attempt = evaluate_response(response, instance, solved, bundle.strategy_tag)
        if attempt.is_valid:
            current = attempt.outcome.route
            candidates.append((attempt.length, current))
        steps.append(RefineStep(iteration, attempt, current))
    best_length, best_route = min(candidates, key=lambda c: c[0])
    best_image = render_route(instance, best_route, style)
    _sink(image_sink, instance.instance_id, "refine_best", best_image)
    image_tags.append("refine_best")
    return RefineTrace(
        variant,
        instance.instance_id,
        tuple(initial_attempts),
        initial_route,
        tuple(steps),
        False,
        best_route,
        best_length,
        gap_percent(best_length, solved.optimal_length),
        tuple(image_tags),
    )


def run_self_refine_1(
    instance: Instance,
    solved: SolvedInstance,
    text_backend: Backend,
    vision_backend: Backend,
    iters: int = DEFAULT_REFINE_ITERS,
    style: RenderStyle | None = None,
    image_sink: ImageSink | None = None,
    initial_retry_cap: int = INITIAL_RETRY_CAP,
) -> RefineTrace:
    """Initial route from a text-only point listing, then visual feedback loops."""
    return _run_refine(
        "one", instance, solved, text_backend, vision_backend, iters, style, image_sink,
        initial_retry_cap,
    )


def run_self_refine_2(
    instance: Instance,
    solved: SolvedInstance,
    vision_backend: Backend,
    iters: int = DEFAULT_REFINE_ITERS,
    style: RenderStyle | None = None,
    image_sink: ImageSink | None = None,
    initial_retry_cap: int = INITIAL_RETRY_CAP,
) -> RefineTrace:
    """Initial route from a zero-shot visual attempt, then the same loop."""
    return _run_refine(
        "two", instance, solved, vision_backend, vision_backend, iters, style, image_sink,
        initial_retry_cap,
    )


# ---------------------------------------------------------------------------
# record building

def _attempt_payload(attempt: Attempt) -> dict:
    return {
        "bundle_tag": attempt.bundle_tag,
        "transport_status": attempt.raw.transport_status,
        "status": attempt.outcome.status,
        "detail": attempt.outcome.detail,
        "raw_tokens": list(attempt.outcome.raw_tokens),
        "route": list(attempt.outcome.route.order) if attempt.outcome.route else None,
        "length": attempt.length,
        "gap_percent": attempt.gap_percent,
    }


def single_shot_record(
    run_id: str, strategy: str, instance: Instance, solved: SolvedInstance, attempt: Attempt
) -> RunRecord:
    return RunRecord(
        run_id=run_id,
        strategy=strategy,
        instance_id=instance.instance_id,
        n=instance.n,
        status=attempt.outcome.status,
        length=attempt.length,
        gap_percent=attempt.gap_percent,
        payload={"optimal_length": solved.optimal_length, "attempt": _attempt_payload(attempt)},
    )


def ensemble_record(
    run_id: str, instance: Instance, solved: SolvedInstance, result: EnsembleResult
) -> RunRecord:
    """Record-level status and length come from the largest ensemble size."""
    largest = result.per_size[max(result.per_size)]
    if largest.best_route is not None:
        status, length, gap = STATUS_VALID, largest.best_length, largest.gap_percent
    else:
        status, length, gap = result.attempts[0].outcome.status, None, None
    payload = {
        "optimal_length": solved.optimal_length,
        "attempts": [_attempt_payload(a) for a in result.attempts],
        "per_size": {
            str(size): {
                "best_route": list(sel.best_route.order) if sel.best_route else None,
                "best_length": sel.best_length,
                "gap_percent": sel.gap_percent,
                "valid_count": sel.valid_count,
            }
            for size, sel in sorted(result.per_size.items())
        },
    }
    return RunRecord(
        run_id=run_id,
        strategy=STRATEGY_ENSEMBLE,
        instance_id=instance.instance_id,
        n=instance.n,
        status=status,
        length=length,
        gap_percent=gap,
        payload=payload,
    )


def refine_record(
    run_id: str, strategy: str, instance: Instance, solved: SolvedInstance, trace: RefineTrace
) -> RunRecord:
    if trace.failed:
        status, length, gap = trace.initial_attempts[-1].outcome.status, None, None
    else:
        status, length, gap = STATUS_VALID, trace.best_length, trace.best_gap_percent
    payload = {
        "optimal_length": solved.optimal_length,
        "variant": trace.variant,
        "failed": trace.failed,
        "iters": len(trace.steps),
        "initial_attempts": [_attempt_payload(a) for a in trace.initial_attempts],
        "initial_route": list(trace.initial_route.order) if trace.initial_route else None,
        "iterations": [
            {
                "iteration": step.iteration,
                "attempt": _attempt_payload(step.attempt),
                "current_route": list(step.current_route.order),
            }
            for step in trace.steps
        ],
        "best_route": list(trace.best_route.order) if trace.best_route else None,
        "best_length": trace.best_length,
        "gap_percent": trace.best_gap_percent,
        "image_tags": list(trace.image_tags),
    }
    return RunRecord(
        run_id=run_id,
        strategy=strategy,
        instance_id=instance.instance_id,
        n=instance.n,
        status=status,
        length=length,
        gap_percent=gap,
        payload=payload,
    )
