"""Command-line front end.

Results go to stdout as JSON; logs and errors go to stderr.  Exit codes:
0 on success, 1 when the work itself came back negative (a rejected
candidate, an empty run), 2 for usage and environment problems.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import pathlib
import random
import shlex
import sys
from importlib import metadata

import tomli

from arcforge.analytics import dataset_stats, embed_similarity, judge_similarity
from arcforge.execution import RunnerConfig, SpawnError
from arcforge.gateway import (
    DEFAULT_STAGE_CONFIGS,
    GatewayError,
    LiveProvider,
    ReplayProvider,
    STAGE_NAMES,
    StageConfig,
)
from arcforge.metrics import MetricsError, complexity_report
from arcforge.model import (
    CandidateProgram,
    SchemaError,
    abstraction_to_dict,
    file_digest,
    manifest_line,
    parse_abstraction,
    parse_seed_examples,
    parse_task_file,
    serialize_task_file,
    sketch_to_dict,
)
from arcforge.pipeline import (
    PipelineConfig,
    StageError,
    derive_source_seed,
    load_gif_source,
    load_precomputed_source,
    run_pipeline,
    run_step1,
    run_step2,
)
from arcforge.retrieval import HashEmbedder
from arcforge.validator import FilterVerdict, ValidationConfig, validate_candidate

logger = logging.getLogger("arcforge.cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class CliError(Exception):
    """Unusable invocation or broken environment (exit 2)."""


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def emit(doc: object) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, ensure_ascii=False) + "\n")


def load_stage_configs(path: str | None) -> dict[str, StageConfig]:
    configs = dict(DEFAULT_STAGE_CONFIGS)
    if path is None:
        return configs
    try:
        with open(path, "rb") as handle:
            doc = tomli.load(handle)
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    except tomli.TOMLDecodeError as exc:
        raise CliError(f"config {path} is not valid TOML: {exc}") from None
    for name, table in doc.get("stages", {}).items():
        if name not in STAGE_NAMES:
            raise CliError(f"config names unknown stage {name!r}; expected one of {STAGE_NAMES}")
        if not isinstance(table, dict):
            raise CliError(f"[stages.{name}] must be a table")
        base = configs[name]
        configs[name] = StageConfig(
            model_id=table.get("model_id", base.model_id),
            max_tokens=table.get("max_tokens", base.max_tokens),
            top_p=table.get("top_p", base.top_p),
            temperature=table.get("temperature", base.temperature),
        )
    return configs


def apply_model_overrides(
    configs: dict[str, StageConfig], overrides: list[str]
) -> dict[str, StageConfig]:
    for item in overrides:
        stage, sep, model_id = item.partition("=")
        if not sep or not model_id or stage not in STAGE_NAMES:
            raise CliError(
                f"--stage-model wants STAGE=MODEL_ID with a known stage, got {item!r}"
            )
        configs[stage] = dataclasses.replace(configs[stage], model_id=model_id)
    return configs


def build_provider(args, configs: dict[str, StageConfig]):
    if getattr(args, "replay", None):
        replay_dir = pathlib.Path(args.replay)
        if not replay_dir.is_dir():
            raise CliError(f"--replay directory {replay_dir} does not exist")
        return ReplayProvider(replay_dir, configs)
    if getattr(args, "live", False):
        try:
            return LiveProvider.from_env(configs)
        except GatewayError as exc:
            raise CliError(str(exc)) from None
    raise CliError("this command needs a model provider: pass --replay DIR or --live")


def add_provider_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument(
        "--replay", metavar="DIR", help="answer model calls from recorded replies"
    )
    group.add_argument(
        "--live",
        action="store_true",
        help="answer model calls via the API named by ARCFORGE_API_KEY/ARCFORGE_API_BASE",
    )


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", help="TOML file with [stages.<name>] tables")
    parser.add_argument(
        "--stage-model",
        action="append",
        default=[],
        metavar="STAGE=MODEL_ID",
        help="override one stage's model id (repeatable; wins over --config)",
    )


def stage_configs_from(args) -> dict[str, StageConfig]:
    return apply_model_overrides(load_stage_configs(args.config), args.stage_model)


def read_text(path: str) -> str:
    try:
        return pathlib.Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None


def read_bytes(path: str) -> bytes:
    try:
        return pathlib.Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None


def load_seed_pool(path: str):
    try:
        return parse_seed_examples(read_text(path))
    except SchemaError as exc:
        raise CliError(f"{path} is not a valid seed-example pool: {exc}") from None


def load_source(path: pathlib.Path):
    if path.suffix == ".json":
        try:
            return load_precomputed_source(path)
        except (OSError, SchemaError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot load scene summary {path}: {exc}") from None
    try:
        return load_gif_source(path)
    except OSError as exc:
        raise CliError(f"cannot load animation {path}: {exc}") from None


def collect_task_paths(inputs: list[str]) -> list[pathlib.Path]:
    paths: list[pathlib.Path] = []
    for item in inputs:
        path = pathlib.Path(item)
        if path.is_dir():
            # synthesize leaves run_manifest.json next to its task files
            paths.extend(
                p for p in sorted(path.glob("*.json")) if p.name != "run_manifest.json"
            )
        elif path.exists():
            paths.append(path)
        else:
            raise CliError(f"no such file or directory: {item}")
    return paths


def load_tasks(paths: list[pathlib.Path]):
    tasks = []
    for path in paths:
        try:
            tasks.append(parse_task_file(read_bytes(str(path))))
        except SchemaError as exc:
            raise CliError(f"{path} is not a valid task file: {exc}") from None
    return tasks


def write_run_manifest(out_dir: pathlib.Path, command: str, created: list[dict], **extra) -> None:
    doc = {"command": command, "created": created, **extra}
    (out_dir / "run_manifest.json").write_text(
        json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def write_output(path_arg: str | None, command: str, payload: str, entry_id: str) -> None:
    """Print ``payload``, and mirror it to ``--out`` with a manifest if asked."""
    sys.stdout.write(payload)
    if path_arg is None:
        return
    out_path = pathlib.Path(path_arg)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    data = payload.encode("utf-8")
    out_path.write_bytes(data)
    write_run_manifest(
        out_path.parent,
        command,
        [{"path": out_path.name, "id": entry_id, "digest": file_digest(data)}],
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_abstract(args) -> int:
    source = load_source(pathlib.Path(args.source))
    if source.abstraction is not None:
        provider = None
    else:
        provider = build_provider(args, stage_configs_from(args))
    try:
        abstraction = run_step1(provider, source)
    except StageError as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE
    doc = {"source_id": source.id, "abstraction": abstraction_to_dict(abstraction)}
    write_output(args.out, "abstract", json.dumps(doc, indent=2, ensure_ascii=False) + "\n", source.id)
    return EXIT_OK


def cmd_sketch(args) -> int:
    path = pathlib.Path(args.abstraction)
    raw = read_text(str(path))
    source_id = path.stem
    try:
        peeled = json.loads(raw)
    except ValueError:
        peeled = None
    if isinstance(peeled, dict) and isinstance(peeled.get("abstraction"), dict):
        # the wrapper `arcforge abstract` emits; its source_id keeps the
        # example sampling identical to a full synthesize run
        source_id = str(peeled.get("source_id") or source_id)
        raw = json.dumps(peeled["abstraction"])
    try:
        abstraction = parse_abstraction(raw)
    except SchemaError as exc:
        raise CliError(f"{path} is not a valid scene summary: {exc}") from None
    pool = load_seed_pool(args.seed_pool)
    provider = build_provider(args, stage_configs_from(args))
    rng = random.Random(derive_source_seed(args.rng_seed, source_id))
    try:
        sketch = run_step2(provider, abstraction, pool, rng, args.sample_size)
    except StageError as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE
    doc = {"source_id": source_id, "sketch": sketch_to_dict(sketch)}
    write_output(args.out, "sketch", json.dumps(doc, indent=2, ensure_ascii=False) + "\n", source_id)
    return EXIT_OK


def collect_sources(inputs: list[str]):
    sources = []
    for item in inputs:
        path = pathlib.Path(item)
        if path.is_dir():
            for child in sorted(path.iterdir()):
                if child.suffix in (".json", ".gif"):
                    sources.append(load_source(child))
        elif path.exists():
            sources.append(load_source(path))
        else:
            raise CliError(f"no such file or directory: {item}")
    return sources


def cmd_synthesize(args) -> int:
    sources = collect_sources(args.sources)
    if not sources:
        raise CliError("no sources found")
    pool = load_seed_pool(args.seed_pool) if args.seed_pool else []
    provider = build_provider(args, stage_configs_from(args))

    validation = ValidationConfig()
    if args.pairs is not None:
        validation = dataclasses.replace(validation, pair_count=args.pairs)
    if args.color_permutations is not None:
        validation = dataclasses.replace(validation, color_permutations=args.color_permutations)
    runner = RunnerConfig(cmd=runner_command(args.runner_cmd))
    try:
        config = PipelineConfig(
            version=args.pipeline_version,
            rng_seed=args.rng_seed,
            seed_sample_size=args.sample_size,
            retrieval_k=args.retrieval_k,
            reprompt_budget=args.reprompt_budget,
            validation=validation,
            runner=runner,
            stage_configs=stage_configs_from(args),
        )
        result = run_pipeline(provider, sources, pool, config)
    except ValueError as exc:
        raise CliError(str(exc)) from None

    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created = []
    for task in result.tasks:
        data = serialize_task_file(task)
        name = f"{task.id}.json"
        (out_dir / name).write_bytes(data)
        created.append({"path": name, "id": task.id, "digest": file_digest(data)})
    failures = [
        {"source_id": f.source_id, "stage": f.stage, "message": f.message}
        for f in result.failures
    ]
    write_run_manifest(
        out_dir,
        "synthesize",
        created,
        fidelity=result.fidelity.as_dict(),
        failures=failures,
    )
    emit(
        {
            "tasks": [task.id for task in result.tasks],
            "out_dir": str(out_dir),
            "fidelity": result.fidelity.as_dict(),
            "failures": failures,
        }
    )
    for line in result.fidelity.render_table().splitlines():
        logger.info("%s", line)
    return EXIT_OK if result.tasks else EXIT_FAILURE


def runner_command(words) -> tuple[str, ...] | None:
    """Interpret --runner-cmd.

    argparse stops collecting at the first dash, so a command that needs
    flags of its own is passed as one quoted string and split here.
    """
    if not words:
        return None
    if len(words) == 1:
        parts = tuple(shlex.split(words[0]))
        if not parts:
            raise CliError("--runner-cmd is empty")
        return parts
    return tuple(words)


def candidate_source_from(path_arg: str) -> str:
    path = pathlib.Path(path_arg)
    if path.suffix == ".json":
        try:
            task = parse_task_file(read_bytes(path_arg))
        except SchemaError as exc:
            raise CliError(f"{path} is not a valid task file: {exc}") from None
        return task.solution.total_source
    return read_text(path_arg)


def cmd_validate(args) -> int:
    source = candidate_source_from(args.candidate)
    try:
        config = ValidationConfig(
            pair_count=args.pairs,
            determinism_repeats=args.repeats,
            color_permutations=args.color_permutations,
            rng_seed=args.rng_seed,
        )
        if args.max_attempts is not None:
            config = dataclasses.replace(config, max_generation_attempts=args.max_attempts)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    runner = RunnerConfig(
        cmd=runner_command(args.runner_cmd),
        common_lib=read_text(args.common_lib) if args.common_lib else "",
    )
    try:
        outcome = validate_candidate(source, config, runner)
    except SpawnError as exc:
        raise CliError(f"could not start the runner: {exc}") from None
    emit(
        {
            "verdict": outcome.verdict.value,
            "detail": outcome.detail,
            "pairs": len(outcome.pairs),
        }
    )
    return EXIT_OK if outcome.verdict is FilterVerdict.PASS else EXIT_FAILURE


def cmd_metrics(args) -> int:
    path = pathlib.Path(args.program)
    if path.suffix == ".json":
        try:
            candidate = parse_task_file(read_bytes(args.program)).solution
        except SchemaError as exc:
            raise CliError(f"{path} is not a valid task file: {exc}") from None
    else:
        source = read_text(args.program)
        candidate = CandidateProgram(
            library_prelude="",
            main_source="",
            generate_input_source="",
            total_source=source,
        )
    try:
        report = complexity_report(candidate)
    except MetricsError as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE
    emit(report.as_dict())
    return EXIT_OK


def cmd_stats(args) -> int:
    tasks = load_tasks(collect_task_paths(args.inputs))
    try:
        stats = dataset_stats(tasks, sample_std=args.sample_std)
    except ValueError as exc:
        logger.error("%s", exc)
        return EXIT_FAILURE
    emit(stats.as_dict())
    return EXIT_OK


def analogy_text(value: str) -> str:
    path = pathlib.Path(value)
    if path.suffix == ".json" and path.exists():
        try:
            return parse_task_file(path.read_bytes()).analogy
        except SchemaError as exc:
            raise CliError(f"{path} is not a valid task file: {exc}") from None
    return value


def cmd_eval_analogy(args) -> int:
    text_a = analogy_text(args.first)
    text_b = analogy_text(args.second)
    try:
        doc = {"embedding": embed_similarity(HashEmbedder(), text_a, text_b)}
    except ValueError as exc:
        raise CliError(str(exc)) from None
    if args.judge:
        provider = build_provider(args, stage_configs_from(args))
        doc["judge"] = judge_similarity(provider, text_a, text_b)
    emit(doc)
    return EXIT_OK


def cmd_export(args) -> int:
    paths = collect_task_paths(args.inputs)
    lines = []
    for path in paths:
        data = read_bytes(str(path))
        try:
            task = parse_task_file(data)
        except SchemaError as exc:
            raise CliError(f"{path} is not a valid task file: {exc}") from None
        lines.append(manifest_line(str(path), task.id, data))
    payload = "".join(line + "\n" for line in lines)
    if args.out:
        out_path = pathlib.Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(payload, encoding="utf-8")
        emit({"manifest": str(out_path), "tasks": len(lines)})
    else:
        sys.stdout.write(payload)
    return EXIT_OK if lines else EXIT_FAILURE


# ---------------------------------------------------------------------------
# the parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arcforge",
        description="Synthesize, filter, and measure grid-puzzle tasks derived from animations.",
    )
    try:
        version = metadata.version("arcforge")
    except metadata.PackageNotFoundError:  # running from a checkout
        version = "unknown"
    parser.add_argument("--version", action="version", version=f"%(prog)s {version}")
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log progress details to stderr"
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = commands.add_parser("abstract", help="summarize one animation into structured JSON")
    p.add_argument("source", help="animation file, or a precomputed summary (.json)")
    p.add_argument("--out", metavar="FILE", help="also write the result here")
    add_provider_flags(p)
    add_config_flags(p)
    p.set_defaults(handler=cmd_abstract)

    p = commands.add_parser("sketch", help="turn a scene summary into a task sketch")
    p.add_argument("abstraction", help="scene summary JSON file")
    p.add_argument("--seed-pool", required=True, metavar="FILE", help="worked-example pool JSON")
    p.add_argument("--sample-size", type=int, default=75, help="examples to sample (default 75)")
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--out", metavar="FILE", help="also write the result here")
    add_provider_flags(p)
    add_config_flags(p)
    p.set_defaults(handler=cmd_sketch)

    p = commands.add_parser("synthesize", help="run the full pipeline over sources")
    p.add_argument("--sources", nargs="+", required=True, help="animation/summary files or directories")
    p.add_argument("--seed-pool", metavar="FILE", help="worked-example pool JSON (required for v1)")
    p.add_argument("--out-dir", required=True, help="directory for the finished task files")
    p.add_argument(
        "--pipeline-version", choices=("v1", "v2"), default="v1", help="generation route"
    )
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--sample-size", type=int, default=75)
    p.add_argument("--retrieval-k", type=int, default=4)
    p.add_argument("--reprompt-budget", type=int, default=0)
    p.add_argument("--pairs", type=int, default=None, help="demonstration pairs per task")
    p.add_argument("--color-permutations", type=int, default=None)
    p.add_argument(
        "--runner-cmd",
        nargs="+",
        metavar="ARG",
        help='external runner for validation; quote to pass flags ("python3 -m arcforge_runner")',
    )
    add_provider_flags(p)
    add_config_flags(p)
    p.set_defaults(handler=cmd_synthesize)

    p = commands.add_parser("validate", help="run one candidate through the filter gate")
    p.add_argument("candidate", help="candidate .py file or task .json file")
    p.add_argument("--pairs", type=int, default=4)
    p.add_argument("--repeats", type=int, default=2, help="determinism re-runs per input")
    p.add_argument("--color-permutations", type=int, default=3)
    p.add_argument("--max-attempts", type=int, default=None)
    p.add_argument("--rng-seed", type=int, default=0)
    p.add_argument("--common-lib", metavar="FILE", help="shared helper source loaded before the candidate")
    p.add_argument(
        "--runner-cmd",
        nargs="+",
        metavar="ARG",
        help='external runner command; quote to pass flags ("python3 -m arcforge_runner")',
    )
    p.set_defaults(handler=cmd_validate)

    p = commands.add_parser("metrics", help="static complexity measures for a program")
    p.add_argument("program", help="candidate .py file or task .json file")
    p.set_defaults(handler=cmd_metrics)

    p = commands.add_parser("stats", help="size and color statistics over task files")
    p.add_argument("inputs", nargs="+", help="task files or directories of them")
    p.add_argument(
        "--sample-std",
        action="store_true",
        help="use the n-1 sample form instead of the population form",
    )
    p.set_defaults(handler=cmd_stats)

    p = commands.add_parser("eval-analogy", help="similarity of two analogy texts")
    p.add_argument("first", help="analogy text, or a task .json file")
    p.add_argument("second", help="analogy text, or a task .json file")
    p.add_argument("--judge", action="store_true", help="also ask the judge stage for a score")
    add_provider_flags(p)
    add_config_flags(p)
    p.set_defaults(handler=cmd_eval_analogy)

    p = commands.add_parser("export", help="emit a JSON-lines manifest of task files")
    p.add_argument("inputs", nargs="+", help="task files or directories of them")
    p.add_argument("--out", metavar="FILE", help="write the manifest here instead of stdout")
    p.set_defaults(handler=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except CliError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except GatewayError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
