"""Command-line entry point: generate datasets, run strategies, build reports.

Exit codes: 0 success, 1 usage error (bad flags or config), 2 harness fault
(I/O failure, broken dataset, backend misconfiguration). Per-instance
strategy failures do not abort a run; they are recorded in failures.json
and the run still exits 0.

Config precedence: command-line flags beat the ``--config`` file, which
beats built-in defaults. The config file is a flat ``key = value`` listing
(one pair per line, ``#`` comments, quoted or bare scalar values; keys use
the flag names with underscores). Unknown keys are hard errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import backend as backend_mod
from . import metrics, strategies
from .backend import (
    Backend,
    BackendConfig,
    BackendError,
    HttpBackend,
    MockOracleBackend,
    MockOracleConfig,
    RecordingBackend,
    ScriptedBackend,
)
from .instances import Dataset, DatasetError, generate_dataset, load_dataset, save_dataset
from .prompts import TEMPLATE_VERSION
from .render import Image, RenderStyle, save_image, style_digest
from .solver import SOLVE_EXACT_MAX_N, SolvedInstance, load_solutions, save_solutions, solve_exact


class UsageError(ValueError):
    """Bad flags or config; exits with code 1."""


DEFAULT_SIZES = "5,10,15,20"
DEFAULT_COUNT = 30
DEFAULT_DATA_DIR = "data"
DEFAULT_OUT_DIR = "runs"

GENERATE_DEFAULTS: dict = {
    "out": DEFAULT_DATA_DIR,
    "sizes": DEFAULT_SIZES,
    "count": DEFAULT_COUNT,
    "seed": 0,
    "workers": 4,
}

RUN_DEFAULTS: dict = {
    "dataset": DEFAULT_DATA_DIR,
    "strategy": None,
    "backend": backend_mod.KIND_MOCK_ORACLE,
    "endpoint": "",
    "model": "",
    "text_model": "",
    "api_key_env": "TSP_EYEBALL_API_KEY",
    "temperature": None,
    "max_output_tokens": 1024,
    "timeout": 60.0,
    "retries": 3,
    "max_concurrent": 4,
    "transcript": "",
    "mock_p_optimal": 1.0,
    "mock_p_perturbed": 0.0,
    "mock_p_incorrect_id": 0.0,
    "mock_p_incomplete": 0.0,
    "mock_p_unparseable": 0.0,
    "mock_perturb_moves": 2,
    "mock_seed": None,
    "k": strategies.DEFAULT_ENSEMBLE_K,
    "ensemble_sizes": "3,5,7,9,11,13",
    "iters": strategies.DEFAULT_REFINE_ITERS,
    "demos": strategies.DEFAULT_DEMO_COUNT,
    "retry_cap": strategies.INITIAL_RETRY_CAP,
    "sizes": "",
    "limit": 0,
    "workers": 4,
    "seed": 0,
    "canvas_px": 768,
    "out_dir": DEFAULT_OUT_DIR,
    "dump_prompts": False,
}

REPORT_DEFAULTS: dict = {
    "run": None,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}")


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from exc


def parse_config_file(path: str | Path) -> dict:
    """Flat key = value file; values are quoted strings, numbers, or booleans."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            raise UsageError(f"{path}:{lineno}: sections are not supported in the config file")
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            values[key] = value[1:-1]
            continue
        lowered = value.lower()
        if lowered in ("true", "false"):
            values[key] = lowered == "true"
            continue
        try:
            values[key] = int(value)
            continue
        except ValueError:
            pass
        try:
            values[key] = float(value)
            continue
        except ValueError:
            pass
        values[key] = value
    return values


_MISSING = object()


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """flags > config file > defaults; unknown config keys are errors."""
    config: dict = {}
    if getattr(args, "config", None):
        config = parse_config_file(args.config)
    resolved: dict = {}
    for key, default in defaults.items():
        config_value = config.pop(key, _MISSING)
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif config_value is not _MISSING:
            resolved[key] = config_value
        else:
            resolved[key] = default
    if config:
        raise UsageError(f"unknown config keys: {', '.join(sorted(config))}")
    return resolved


def build_parser() -> _Parser:
    parser = _Parser(prog="tsp-eyeball", description=__doc__.split("\n", 1)[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a dataset and solve every instance exactly")
    gen.add_argument("--config", help="flat key=value config file")
    gen.add_argument("--out", help=f"output directory (default {DEFAULT_DATA_DIR})")
    gen.add_argument("--sizes", help=f"comma-separated node counts (default {DEFAULT_SIZES})")
    gen.add_argument("--count", type=int, help=f"instances per size (default {DEFAULT_COUNT})")
    gen.add_argument("--seed", type=int, help="master seed (default 0)")
    gen.add_argument("--workers", type=int, help="solver worker threads (default 4)")

    run = sub.add_parser("run", help="run one strategy over a dataset")
    run.add_argument("--config", help="flat key=value config file")
    run.add_argument("--dataset", help=f"dataset directory (default {DEFAULT_DATA_DIR})")
    run.add_argument("--strategy", choices=strategies.ALL_STRATEGIES)
    run.add_argument("--backend", choices=backend_mod.BACKEND_KINDS)
    run.add_argument("--endpoint", help="HTTP backend base URL")
    run.add_argument("--model", help="model name sent to the backend")
    run.add_argument("--text-model", dest="text_model",
                     help="model for the refine-1 text-only initial step (default: --model)")
    run.add_argument("--api-key-env", dest="api_key_env",
                     help="environment variable holding the API key")
    run.add_argument("--temperature", type=float,
                     help="sampling temperature (default 1.0 for ensemble, 0.2 otherwise)")
    run.add_argument("--max-output-tokens", dest="max_output_tokens", type=int)
    run.add_argument("--timeout", type=float, help="per-request timeout in seconds")
    run.add_argument("--retries", type=int, help="transport retries per request")
    run.add_argument("--max-concurrent", dest="max_concurrent", type=int,
                     help="max in-flight HTTP requests")
    run.add_argument("--transcript", help="transcript JSONL to replay (mock-scripted)")
    run.add_argument("--mock-p-optimal", dest="mock_p_optimal", type=float)
    run.add_argument("--mock-p-perturbed", dest="mock_p_perturbed", type=float)
    run.add_argument("--mock-p-incorrect-id", dest="mock_p_incorrect_id", type=float)
    run.add_argument("--mock-p-incomplete", dest="mock_p_incomplete", type=float)
    run.add_argument("--mock-p-unparseable", dest="mock_p_unparseable", type=float)
    run.add_argument("--mock-perturb-moves", dest="mock_perturb_moves", type=int)
    run.add_argument("--mock-seed", dest="mock_seed", type=int,
                     help="mock oracle seed (default: --seed)")
    run.add_argument("--k", type=int, help="ensemble draw count (default 13)")
    run.add_argument("--ensemble-sizes", dest="ensemble_sizes",
                     help="comma-separated ensemble sizes (default 3,5,7,9,11,13)")
    run.add_argument("--iters", type=int, help="refine feedback iterations (default 10)")
    run.add_argument("--demos", type=int, help="few-shot demos per size (default 3)")
    run.add_argument("--retry-cap", dest="retry_cap", type=int,
                     help="refine initial-solution retry cap (default 3)")
    run.add_argument("--sizes", help="evaluate only these node counts")
    run.add_argument("--limit", type=int, help="evaluate at most this many instances")
    run.add_argument("--workers", type=int, help="instance worker threads (default 4)")
    run.add_argument("--seed", type=int, help="master seed recorded in the manifest (default 0)")
    run.add_argument("--canvas-px", dest="canvas_px", type=int, help="render canvas size")
    run.add_argument("--out-dir", dest="out_dir", help=f"runs directory (default {DEFAULT_OUT_DIR})")
    run.add_argument("--dump-prompts", dest="dump_prompts", action="store_const", const=True,
                     help="write human-readable prompt transcripts")

    rep = sub.add_parser("report", help="build CSV tables, charts, and contact sheets for a run")
    rep.add_argument("--config", help="flat key=value config file")
    rep.add_argument("--run", help="run directory (as printed by the run command)")

    return parser


# ---------------------------------------------------------------------------
# generate

def _solve_all(dataset: Dataset, workers: int) -> list[SolvedInstance]:
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(solve_exact, dataset.instances))


def cmd_generate(ns: dict) -> int:
    sizes = _parse_int_list(str(ns["sizes"]))
    if not sizes:
        raise UsageError("--sizes must name at least one size")
    if any(s > SOLVE_EXACT_MAX_N for s in sizes):
        raise UsageError(f"sizes above {SOLVE_EXACT_MAX_N} exceed the exact solver's range")
    if any(s < 3 for s in sizes):
        raise UsageError("sizes below 3 are not tours")
    if ns["count"] < 1:
        raise UsageError("--count must be at least 1")
    out = Path(ns["out"])
    out.mkdir(parents=True, exist_ok=True)
    dataset = generate_dataset(sizes, ns["count"], ns["seed"])
    save_dataset(dataset, out / "dataset.json")
    solved = _solve_all(dataset, ns["workers"])
    save_solutions(solved, out / "solutions.json")
    print(f"generated {len(dataset.instances)} instances "
          f"({len(sizes)} sizes x {ns['count']}) with seed {ns['seed']}")
    print(f"solved {len(solved)} instances exactly -> {out / 'solutions.json'}")
    return 0


# ---------------------------------------------------------------------------
# run

def _load_dataset_dir(path: Path) -> tuple[Dataset, dict[str, SolvedInstance]]:
    dataset_path = path / "dataset.json"
    solutions_path = path / "solutions.json"
    if not dataset_path.exists():
        raise DatasetError(f"{dataset_path}: dataset not found (run the generate command first)")
    dataset = load_dataset(dataset_path)
    if not solutions_path.exists():
        raise DatasetError(f"{solutions_path}: solutions not found (run the generate command first)")
    solved = load_solutions(solutions_path, dataset.by_id())
    missing = [i.instance_id for i in dataset.instances if i.instance_id not in solved]
    if missing:
        raise DatasetError(f"solutions missing for instances: {missing[:5]}")
    return dataset, solved


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _build_backend(
    ns: dict, strategy: str, solved_by_id: dict[str, SolvedInstance]
) -> tuple[Backend, BackendConfig, MockOracleConfig | None]:
    kind = ns["backend"]
    temperature = ns["temperature"]
    if temperature is None:
        temperature = (
            backend_mod.DEFAULT_TEMPERATURE_ENSEMBLE
            if strategy == strategies.STRATEGY_ENSEMBLE
            else backend_mod.DEFAULT_TEMPERATURE_SINGLE
        )
    config = BackendConfig(
        kind=kind,
        endpoint_url=ns["endpoint"],
        model_name=ns["model"] or "mock",
        api_key_env_var=ns["api_key_env"],
        temperature=temperature,
        max_output_tokens=ns["max_output_tokens"],
        request_timeout_s=ns["timeout"],
        max_retries=ns["retries"],
        max_concurrent_requests=ns["max_concurrent"],
    )
    config.validate()
    if kind == backend_mod.KIND_MOCK_ORACLE:
        mock_seed = ns["mock_seed"] if ns["mock_seed"] is not None else ns["seed"]
        mock_config = MockOracleConfig(
            p_optimal=ns["mock_p_optimal"],
            p_perturbed=ns["mock_p_perturbed"],
            p_incorrect_id=ns["mock_p_incorrect_id"],
            p_incomplete=ns["mock_p_incomplete"],
            p_unparseable=ns["mock_p_unparseable"],
            perturb_moves=ns["mock_perturb_moves"],
            seed=mock_seed,
        )
        mock_config.validate()
        return MockOracleBackend(mock_config, solved_by_id), config, mock_config
    if kind == backend_mod.KIND_MOCK_SCRIPTED:
        if not ns["transcript"]:
            raise UsageError("--transcript is required with the mock-scripted backend")
        return ScriptedBackend.from_transcript(ns["transcript"]), config, None
    return HttpBackend(config), config, None


def _build_text_backend(ns: dict, vision: Backend, config: BackendConfig) -> Backend:
    # refine-1's initial step may target a different (text-only) model
    if config.kind != backend_mod.KIND_HTTP or not ns["text_model"] or ns["text_model"] == config.model_name:
        return vision
    text_config = BackendConfig(
        kind=config.kind,
        endpoint_url=config.endpoint_url,
        model_name=ns["text_model"],
        api_key_env_var=config.api_key_env_var,
        temperature=config.temperature,
        max_output_tokens=config.max_output_tokens,
        request_timeout_s=config.request_timeout_s,
        max_retries=config.max_retries,
        max_concurrent_requests=config.max_concurrent_requests,
    )
    return HttpBackend(text_config)


def _select_targets(
    dataset: Dataset, solved: dict[str, SolvedInstance], ns: dict, strategy: str
) -> tuple[list[SolvedInstance], dict[int, list[SolvedInstance]]]:
    size_filter = set(_parse_int_list(str(ns["sizes"]))) if ns["sizes"] else None
    in_order = [solved[i.instance_id] for i in dataset.instances]
    demo_map: dict[int, list[SolvedInstance]] = {}
    pool = in_order
    if strategy in (strategies.STRATEGY_FEW_SHOT_V1, strategies.STRATEGY_FEW_SHOT_V2):
        demo_count = ns["demos"]
        if demo_count < 1:
            raise UsageError("--demos must be at least 1")
        # the first demo_count instances of each size are held out as demos
        by_size: dict[int, list[SolvedInstance]] = {}
        for s in in_order:
            by_size.setdefault(s.instance.n, []).append(s)
        pool = []
        for size, members in by_size.items():
            if len(members) <= demo_count:
                raise UsageError(
                    f"size {size} has {len(members)} instances; need more than --demos={demo_count}"
                )
            demo_map[size] = members[:demo_count]
            pool.extend(members[demo_count:])
        order = {inst.instance_id: i for i, inst in enumerate(dataset.instances)}
        pool.sort(key=lambda s: order[s.instance.instance_id])
    targets = [s for s in pool if size_filter is None or s.instance.n in size_filter]
    if ns["limit"]:
        targets = targets[: ns["limit"]]
    if not targets:
        raise UsageError("no instances left to evaluate after filtering")
    return targets, demo_map


def _run_one(
    strategy: str,
    target: SolvedInstance,
    ns: dict,
    run_id: str,
    backend: Backend,
    text_backend: Backend,
    demo_map: dict[int, list[SolvedInstance]],
    style: RenderStyle,
    sink,
) -> metrics.RunRecord:
    inst = target.instance
    if strategy == strategies.STRATEGY_ZERO_SHOT:
        attempt = strategies.run_zero_shot(inst, target, backend, style, sink)
        return strategies.single_shot_record(run_id, strategy, inst, target, attempt)
    if strategy in (strategies.STRATEGY_FEW_SHOT_V1, strategies.STRATEGY_FEW_SHOT_V2):
        variant = "v1" if strategy == strategies.STRATEGY_FEW_SHOT_V1 else "v2"
        demos = demo_map[inst.n]
        attempt = strategies.run_few_shot(inst, target, demos, backend, variant, style, sink)
        return strategies.single_shot_record(run_id, strategy, inst, target, attempt)
    if strategy == strategies.STRATEGY_ENSEMBLE:
        sizes = tuple(_parse_int_list(str(ns["ensemble_sizes"])))
        result = strategies.run_self_ensemble(
            inst, target, backend, ns["k"], sizes, style, sink
        )
        return strategies.ensemble_record(run_id, inst, target, result)
    if strategy == strategies.STRATEGY_REFINE_1:
        trace = strategies.run_self_refine_1(
            inst, target, text_backend, backend, ns["iters"], style, sink, ns["retry_cap"]
        )
        return strategies.refine_record(run_id, strategy, inst, target, trace)
    trace = strategies.run_self_refine_2(
        inst, target, backend, ns["iters"], style, sink, ns["retry_cap"]
    )
    return strategies.refine_record(run_id, strategy, inst, target, trace)


def cmd_run(ns: dict) -> int:
    strategy = ns["strategy"]
    if not strategy:
        raise UsageError("--strategy is required")
    if ns["k"] < 1 or ns["iters"] < 1 or ns["retry_cap"] < 1 or ns["workers"] < 1:
        raise UsageError("--k, --iters, --retry-cap, and --workers must be positive")
    dataset_dir = Path(ns["dataset"])
    dataset, solved = _load_dataset_dir(dataset_dir)
    targets, demo_map = _select_targets(dataset, solved, ns, strategy)
    style = RenderStyle(canvas_px=ns["canvas_px"])
    style.validate()
    backend, config, mock_config = _build_backend(ns, strategy, solved)
    text_backend_inner = _build_text_backend(ns, backend, config)

    manifest_core = {
        "schema": 1,
        "dataset": {
            "path": str(dataset_dir),
            "dataset_sha256": _file_sha256(dataset_dir / "dataset.json"),
            "solutions_sha256": _file_sha256(dataset_dir / "solutions.json"),
        },
        "strategy": strategy,
        "parameters": {
            "k": ns["k"],
            "ensemble_sizes": _parse_int_list(str(ns["ensemble_sizes"])),
            "iters": ns["iters"],
            "demo_count": ns["demos"],
            "initial_retry_cap": ns["retry_cap"],
            "size_filter": _parse_int_list(str(ns["sizes"])) if ns["sizes"] else [],
            "limit": ns["limit"],
            "workers": ns["workers"],
            "master_seed": ns["seed"],
        },
        "backend": {
            "kind": config.kind,
            "endpoint_url": config.endpoint_url,
            "model_name": config.model_name,
            "text_model_name": ns["text_model"] or config.model_name,
            "api_key_env_var": config.api_key_env_var,
            "temperature": config.temperature,
            "max_output_tokens": config.max_output_tokens,
            "request_timeout_s": config.request_timeout_s,
            "max_retries": config.max_retries,
            "max_concurrent_requests": config.max_concurrent_requests,
            "generation_config": config.generation_config,
            "safety_settings": config.safety_settings,
            "transcript_path": ns["transcript"] or None,
            "mock": None
            if mock_config is None
            else {
                "p_optimal": mock_config.p_optimal,
                "p_perturbed": mock_config.p_perturbed,
                "p_incorrect_id": mock_config.p_incorrect_id,
                "p_incomplete": mock_config.p_incomplete,
                "p_unparseable": mock_config.p_unparseable,
                "perturb_moves": mock_config.perturb_moves,
                "seed": mock_config.seed,
            },
        },
        "prompt_template_version": TEMPLATE_VERSION,
        "render_style": {
            "canvas_px": style.canvas_px,
            "marker_radius_px": style.marker_radius_px,
            "label_font_px": style.label_font_px,
            "route_stroke_px": style.route_stroke_px,
            "margin_frac": style.margin_frac,
        },
        "render_style_digest": style_digest(style),
    }
    digest = hashlib.sha256(
        json.dumps(manifest_core, sort_keys=True).encode("utf-8")
    ).hexdigest()
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    out_root = Path(ns["out_dir"])
    run_id = f"{stamp}-{digest[:8]}"
    suffix = 1
    while (out_root / run_id).exists():
        suffix += 1
        run_id = f"{stamp}-{digest[:8]}-{suffix}"
    run_dir = out_root / run_id
    (run_dir / "images").mkdir(parents=True)
    (run_dir / "transcripts").mkdir(parents=True)
    manifest = dict(manifest_core)
    manifest["run_id"] = run_id
    manifest["created_utc"] = stamp
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    dump_dir = (run_dir / "transcripts" / "prompts") if ns["dump_prompts"] else None
    recorder = RecordingBackend(backend, run_dir / "transcripts" / "responses.jsonl", dump_dir)
    if text_backend_inner is backend:
        text_recorder: Backend = recorder
    else:
        text_recorder = RecordingBackend(
            text_backend_inner, run_dir / "transcripts" / "responses.jsonl", dump_dir
        )

    def sink(instance_id: str, tag: str, image: Image) -> None:
        save_image(image, run_dir / "images" / instance_id / f"{tag}.png")

    records: list[metrics.RunRecord] = []
    failures: list[dict] = []

    def evaluate(target: SolvedInstance):
        try:
            return strategy_record(target)
        except Exception as exc:  # per-instance fault; the run continues
            return {"instance_id": target.instance.instance_id, "error": f"{type(exc).__name__}: {exc}"}

    def strategy_record(target: SolvedInstance) -> metrics.RunRecord:
        return _run_one(
            strategy, target, ns, run_id, recorder, text_recorder, demo_map, style, sink
        )

    with ThreadPoolExecutor(max_workers=ns["workers"]) as pool:
        for outcome in pool.map(evaluate, targets):
            if isinstance(outcome, metrics.RunRecord):
                records.append(outcome)
            else:
                failures.append(outcome)

    records.sort(key=lambda r: (r.n, r.instance_id))
    metrics.save_records(records, run_id, run_dir / "records.json")
    if failures:
        (run_dir / "failures.json").write_text(
            json.dumps({"schema": 1, "failures": failures}, indent=2) + "\n", encoding="utf-8"
        )
        for failure in failures:
            print(f"warning: {failure['instance_id']}: {failure['error']}", file=sys.stderr)
    print(f"run {run_id}: {len(records)} records, {len(failures)} failures -> {run_dir}")
    return 0


# ---------------------------------------------------------------------------
# report

def cmd_report(ns: dict) -> int:
    if not ns["run"]:
        raise UsageError("--run is required")
    run_dir = Path(ns["run"])
    records_path = run_dir / "records.json"
    if not records_path.exists():
        raise FileNotFoundError(f"{records_path}: no records found; is this a run directory?")
    records = metrics.load_records(records_path)
    stats = metrics.summarize(records)
    images_dir = run_dir / "images"
    written = metrics.emit_report(
        stats, records, run_dir / "report", images_dir if images_dir.exists() else None
    )
    for path in written:
        print(f"wrote {path}")
    sheets = sorted((run_dir / "report" / "contact_sheets").glob("*.png"))
    if sheets:
        print(f"wrote {len(sheets)} contact sheets -> {run_dir / 'report' / 'contact_sheets'}")
    return 0


# ---------------------------------------------------------------------------

def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "generate":
            return cmd_generate(_resolve(args, GENERATE_DEFAULTS))
        if args.command == "run":
            return cmd_run(_resolve(args, RUN_DEFAULTS))
        return cmd_report(_resolve(args, REPORT_DEFAULTS))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (BackendError, DatasetError, OSError, ValueError) as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        traceback.print_exc()
        print(f"fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
