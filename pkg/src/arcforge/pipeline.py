"""The animation-to-task synthesis pipeline.

Three model-backed stages turn one animation into one executable task:

1. *abstraction* — sampled frames go to a vision model that returns a
   structured scene summary (or the summary is supplied precomputed);
2. *sketch* — the summary, plus a sample of worked examples, prompts a
   model for a two-line task sketch (``# concepts:`` / ``# description:``);
3. *task* — the sketch becomes a candidate program, either by
   retrieval-augmented generation over similar worked examples (``v1``)
   or by composing per-object bitmap generators (``v2``), after which
   the behavioral validation gate decides acceptance.

Stage failures are isolated per source: a source that dies in stage N
never counts as an attempt for stage N+1, which keeps the fidelity
rates conditional.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import pathlib
import random
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from arcforge.fidelity import FidelityReport
from arcforge.gateway import (
    DEFAULT_STAGE_CONFIGS,
    Attachment,
    ChatRequest,
    ExtractionError,
    GatewayError,
    ReplayMiss,
    StageConfig,
    extract_named,
)
from arcforge.metrics import complexity_report
from arcforge.model import (
    ArcTask,
    CandidateProgram,
    ObjectRef,
    ObjectSeed,
    Provenance,
    SchemaError,
    SeedExample,
    TaskSketch,
    VisualAbstraction,
    check_candidate,
    parse_abstraction,
    split_pairs,
)
from arcforge.retrieval import (
    HashEmbedder,
    VectorIndex,
    build_seed_catalog,
    index_seed_examples,
    lookup_object_seed,
    normalize_name,
)
from arcforge.execution import RunnerConfig
from arcforge.validator import FilterVerdict, ValidationConfig, validate_candidate

PIPELINE_VERSIONS = ("v1", "v2")

TEMPLATE_NAMES = ("step1", "step2", "step3_v1", "step3_1", "step3_2", "judge", "classifier")


class TemplateError(Exception):
    """A prompt template file or a render call is malformed."""


class StageError(Exception):
    """One pipeline stage failed for one source."""

    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.message = message


# ---------------------------------------------------------------------------
# prompt templates
# ---------------------------------------------------------------------------

_PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    """A system/user prompt pair with named ``{placeholder}`` holes.

    Rendering is a single substitution pass (not ``str.format``), so
    literal braces in the prompt text — JSON examples, code — survive
    untouched, and brace-bearing *values* are never rescanned for
    further placeholders.
    """

    name: str
    placeholders: frozenset[str]
    system: str
    user: str

    @classmethod
    def parse(cls, name: str, text: str) -> "PromptTemplate":
        lines = text.splitlines()
        if not lines or not lines[0].startswith("placeholders:"):
            raise TemplateError(f"{name}: first line must declare 'placeholders:'")
        declared = frozenset(
            part.strip() for part in lines[0].split(":", 1)[1].split(",") if part.strip()
        )
        try:
            system_at = lines.index("--- system ---")
            user_at = lines.index("--- user ---")
        except ValueError:
            raise TemplateError(
                f"{name}: needs '--- system ---' and '--- user ---' section markers"
            ) from None
        if not system_at < user_at:
            raise TemplateError(f"{name}: system section must precede the user section")
        system = "\n".join(lines[system_at + 1 : user_at]).strip()
        user = "\n".join(lines[user_at + 1 :]).strip()
        referenced = frozenset(_PLACEHOLDER.findall(system)) | frozenset(
            _PLACEHOLDER.findall(user)
        )
        if referenced != declared:
            undeclared = sorted(referenced - declared)
            unused = sorted(declared - referenced)
            problems = []
            if undeclared:
                problems.append(f"undeclared placeholders {undeclared}")
            if unused:
                problems.append(f"declared but never used {unused}")
            raise TemplateError(f"{name}: " + "; ".join(problems))
        return cls(name=name, placeholders=declared, system=system, user=user)

    def render(self, **values: str) -> tuple[str, str]:
        if set(values) != set(self.placeholders):
            missing = sorted(self.placeholders - set(values))
            unexpected = sorted(set(values) - self.placeholders)
            problems = []
            if missing:
                problems.append(f"missing values for {missing}")
            if unexpected:
                problems.append(f"unexpected values {unexpected}")
            raise TemplateError(f"{self.name}: " + "; ".join(problems))
        for key, value in values.items():
            if not isinstance(value, str):
                raise TemplateError(f"{self.name}: value for {key!r} must be a string")

        def substitute(match: re.Match) -> str:
            return values[match.group(1)]

        return _PLACEHOLDER.sub(substitute, self.system), _PLACEHOLDER.sub(
            substitute, self.user
        )


@lru_cache(maxsize=None)
def load_template(name: str) -> PromptTemplate:
    if name not in TEMPLATE_NAMES:
        raise TemplateError(f"unknown template {name!r}; expected one of {TEMPLATE_NAMES}")
    text = (resources.files("arcforge") / "prompts" / f"{name}.prompt").read_text(
        encoding="utf-8"
    )
    return PromptTemplate.parse(name, text)


# ---------------------------------------------------------------------------
# sources
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GifSource:
    """One animation to synthesize from: frames, or a ready abstraction."""

    id: str
    origin: str  # "local-file" | "precomputed-abstraction"
    frames: tuple[Attachment, ...] = ()
    abstraction: VisualAbstraction | None = None


def load_gif_source(path: str | pathlib.Path, max_frames: int = 8) -> GifSource:
    """Open an animation file and sample up to ``max_frames`` frames evenly.

    Frames are re-encoded as PNG so the attachment bytes do not depend
    on the source file's palette or compression quirks.
    """
    from PIL import Image

    path = pathlib.Path(path)
    frames: list[Attachment] = []
    with Image.open(path) as image:
        available = getattr(image, "n_frames", 1)
        count = min(max_frames, available)
        if count == 1:
            indices = [0]
        else:
            indices = [round(i * (available - 1) / (count - 1)) for i in range(count)]
        for index in indices:
            image.seek(index)
            buffer = io.BytesIO()
            image.convert("RGB").save(buffer, format="PNG")
            frames.append(Attachment(media_type="image/png", data=buffer.getvalue()))
    return GifSource(id=path.stem, origin="local-file", frames=tuple(frames))


def precomputed_source(source_id: str, abstraction: VisualAbstraction) -> GifSource:
    return GifSource(id=source_id, origin="precomputed-abstraction", abstraction=abstraction)


def load_precomputed_source(path: str | pathlib.Path) -> GifSource:
    """Read a stored abstraction JSON file; the filename stem is the id."""
    path = pathlib.Path(path)
    doc = path.read_text(encoding="utf-8")
    import json

    return precomputed_source(path.stem, parse_abstraction(json.loads(doc)))


# ---------------------------------------------------------------------------
# prompt-block rendering
# ---------------------------------------------------------------------------


def format_seed_example(seed: SeedExample) -> str:
    return (
        "# concepts: "
        + ", ".join(seed.concepts)
        + "\n# description: "
        + seed.description
        + "\n"
        + seed.solution.total_source.rstrip("\n")
    )


def seed_example_block(seeds: list[SeedExample]) -> str:
    return "\n\n".join(format_seed_example(seed) for seed in seeds)


def sample_seed_examples(
    pool: list[SeedExample], rng: random.Random, count: int
) -> list[SeedExample]:
    return rng.sample(pool, min(count, len(pool)))


def abstraction_block(abstraction: VisualAbstraction) -> str:
    """The six summary fields as prompt bullets (visual_elements stays out)."""

    def join(items) -> str:
        return "; ".join(items) if items else "none noted"

    objects = ", ".join(f"{o.name} ({o.kind})" for o in abstraction.objects)
    interactions = join(
        [
            f"{' and '.join(i.objects_involved)} [{i.interaction_type}]"
            + (f" ({', '.join(i.interaction_parameters)})" if i.interaction_parameters else "")
            for i in abstraction.interactions
        ]
    )
    return "\n".join(
        [
            f"- scenario: {abstraction.scenario}",
            f"- objects: {objects or 'none noted'}",
            f"- static_patterns: {join(abstraction.static_patterns)}",
            f"- dynamic_patterns: {join(abstraction.dynamic_patterns)}",
            f"- core_principles: {join(abstraction.core_principles)}",
            f"- interactions: {interactions}",
        ]
    )


def compose_story(abstraction: VisualAbstraction) -> str:
    """One-line scene recap: explicit objects plus interaction summaries."""
    names = [o.name for o in abstraction.explicit_objects()]
    parts = [abstraction.scenario.rstrip(".") + "."]
    if names:
        parts.append("Objects: " + ", ".join(names) + ".")
    if abstraction.interactions:
        summaries = "; ".join(
            f"{' and '.join(i.objects_involved)} — {i.interaction_type}"
            + (f" ({', '.join(i.interaction_parameters)})" if i.interaction_parameters else "")
            for i in abstraction.interactions
        )
        parts.append("Interactions: " + summaries + ".")
    return " ".join(parts)


# ---------------------------------------------------------------------------
# stage runners
# ---------------------------------------------------------------------------


def _complete(provider, request: ChatRequest, stage: str) -> str:
    """Call the provider, folding model-side failures into the stage.

    A replay miss stays fatal: it means the fixture set is stale, which
    is an environment problem rather than a model answer.
    """
    try:
        return provider.complete(request).text
    except ReplayMiss:
        raise
    except GatewayError as exc:
        raise StageError(stage, str(exc)) from None


def run_step1(provider, source: GifSource) -> VisualAbstraction:
    if source.abstraction is not None:
        return source.abstraction
    if not source.frames:
        raise StageError("abstraction", f"source {source.id!r} has no frames and no summary")
    template = load_template("step1")
    system, user = template.render(frame_count=str(len(source.frames)))
    text = _complete(
        provider,
        ChatRequest(stage="step1", system=system, user=user, attachments=source.frames),
        "abstraction",
    )
    try:
        return parse_abstraction(extract_named(text, "abstraction"))
    except (ExtractionError, SchemaError) as exc:
        raise StageError("abstraction", str(exc)) from None


_CONCEPTS_HEADER = "# concepts:"
_DESCRIPTION_HEADER = "# description:"


def parse_sketch_reply(text: str) -> TaskSketch:
    """Parse the frozen two-header sketch format; anything else fails."""
    concepts: list[str] | None = None
    description_parts: list[str] = []
    collecting = False
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if line.startswith(_CONCEPTS_HEADER):
            collecting = False
            concepts = [
                part.strip()
                for part in line[len(_CONCEPTS_HEADER) :].split(",")
                if part.strip()
            ]
        elif line.startswith(_DESCRIPTION_HEADER):
            description_parts.append(line[len(_DESCRIPTION_HEADER) :].strip())
            collecting = True
        elif collecting:
            if not line or line.startswith("#") or line.startswith("```"):
                collecting = False
            else:
                description_parts.append(line)
    description = " ".join(part for part in description_parts if part)
    if not concepts:
        raise StageError("sketch", f"reply lacks a usable {_CONCEPTS_HEADER!r} header")
    if not description:
        raise StageError("sketch", f"reply lacks a usable {_DESCRIPTION_HEADER!r} header")
    return TaskSketch(concepts=tuple(concepts), description=description)


def run_step2(
    provider,
    abstraction: VisualAbstraction,
    seed_pool: list[SeedExample],
    rng: random.Random,
    sample_size: int = 75,
) -> TaskSketch:
    template = load_template("step2")
    system, user = template.render(
        seed_block=seed_example_block(sample_seed_examples(seed_pool, rng, sample_size)),
        abstraction_block=abstraction_block(abstraction),
    )
    text = _complete(provider, ChatRequest(stage="step2", system=system, user=user), "sketch")
    return parse_sketch_reply(text)


def run_step3_v1(
    provider,
    sketch: TaskSketch,
    index: VectorIndex,
    embedder,
    k: int = 4,
) -> CandidateProgram:
    try:
        query = embedder.embed(sketch.description)
        hits = index.top_k(query.values, k)
    except ValueError as exc:
        raise StageError("task", f"retrieval failed: {exc}") from None
    examples = [entry.payload for entry, _ in hits]
    template = load_template("step3_v1")
    system, user = template.render(
        examples_block=seed_example_block(examples),
        concepts=", ".join(sketch.concepts),
        description=sketch.description,
    )
    text = _complete(provider, ChatRequest(stage="step3", system=system, user=user), "task")
    try:
        doc = extract_named(text, "program_v1")
        candidate = CandidateProgram(
            library_prelude=_string_field(doc, "library"),
            main_source=_string_field(doc, "main_code"),
            generate_input_source=_string_field(doc, "generate_input_code"),
            total_source=_string_field(doc, "total_code"),
        )
        check_candidate(candidate)
    except (ExtractionError, SchemaError, ValueError) as exc:
        raise StageError("task", str(exc)) from None
    return candidate


def _string_field(doc: dict, key: str) -> str:
    value = doc.get(key)
    if not isinstance(value, str):
        raise ValueError(f"field {key!r} must be a string")
    return value


SEED_FUNCTION_SUFFIX = "_input_bitmap_generation"

_DEF_NAME = re.compile(r"def\s+([A-Za-z_]\w*)\s*\(")


def seed_function_name(source: str) -> str:
    match = _DEF_NAME.search(source)
    if match is None:
        raise ValueError("generator source defines no function")
    return match.group(1)


def _string_map(value: object) -> dict[str, str]:
    """Coerce a reply's mapping-or-prose field to ``dict[str, str]``."""
    if isinstance(value, dict):
        return {str(k): str(v) for k, v in value.items()}
    if isinstance(value, str):
        return {"summary": value} if value else {}
    return {}


def run_step3_1(provider, obj: ObjectRef, abstraction: VisualAbstraction) -> ObjectSeed:
    template = load_template("step3_1")
    system, user = template.render(object_name=obj.name, scenario=abstraction.scenario)
    text = _complete(provider, ChatRequest(stage="step3_1", system=system, user=user), "task")
    try:
        doc = extract_named(text, "bitmap_seed")
        function_code = _string_field(doc, "function_code")
        name = seed_function_name(function_code)
        if not name.endswith(SEED_FUNCTION_SUFFIX):
            raise ValueError(
                f"seed function {name!r} does not end with {SEED_FUNCTION_SUFFIX!r}"
            )
    except (ExtractionError, ValueError) as exc:
        raise StageError("task", f"object seed for {obj.name!r}: {exc}") from None
    return ObjectSeed(
        name=obj.name,
        kind="explicit",
        generator_source=function_code,
        pixel_meaning=_string_map(doc.get("pixel_meaning")),
        parameter_desc=_string_map(doc.get("parameter_desc")),
    )


#: Fallback entry point attached when a composed program has none: pick
#: one of the module's bitmap builders at random per call.
ADAPTER_SOURCE = '''\
def generate_input():
    import random
    builders = [value for name, value in sorted(globals().items())
                if "_input_bitmap_" in name and callable(value)]
    return random.choice(builders)()
'''


def run_step3_v2(
    provider,
    abstraction: VisualAbstraction,
    sketch: TaskSketch,
    seed_catalog: dict[str, ObjectSeed],
) -> tuple[CandidateProgram, tuple[ObjectSeed, ...]]:
    """Compose a candidate from per-object bitmap generators.

    Objects lacking a stored seed (no normalized-name match in the
    catalog) get one minted first; freshly minted seeds are returned so
    the caller can persist them.
    """
    in_play: list[ObjectSeed] = []
    minted: list[ObjectSeed] = []
    seen_names: set[str] = set()
    for obj in abstraction.explicit_objects():
        key = normalize_name(obj.name)
        if key in seen_names:
            continue
        seen_names.add(key)
        seed = lookup_object_seed(seed_catalog, obj.name)
        if seed is None:
            seed = run_step3_1(provider, obj, abstraction)
            minted.append(seed)
        in_play.append(seed)
    if not in_play:
        raise StageError("task", "abstraction names no explicit objects to build from")

    template = load_template("step3_2")
    system, user = template.render(
        story=compose_story(abstraction),
        seed_functions="\n\n".join(seed.generator_source.rstrip("\n") for seed in in_play),
        concepts=", ".join(sketch.concepts),
        description=sketch.description,
    )
    text = _complete(provider, ChatRequest(stage="step3_2", system=system, user=user), "task")
    try:
        doc = extract_named(text, "program_v2")
        input_code = _string_field(doc, "input_bitmap_generation_code")
        solution_code = _string_field(doc, "solution_code")
        _string_field(doc, "used_concept")
    except (ExtractionError, ValueError) as exc:
        raise StageError("task", str(exc)) from None

    for seed in in_play:
        name = seed_function_name(seed.generator_source)
        if name not in input_code:
            raise StageError("task", f"input code never invokes seed function {name!r}")

    prelude = "\n\n".join(seed.generator_source.rstrip("\n") for seed in in_play)
    pieces = [prelude, input_code.rstrip("\n"), solution_code.rstrip("\n")]
    generate_source = input_code
    if "def generate_input" not in input_code and "def generate_input" not in solution_code:
        pieces.append(ADAPTER_SOURCE.rstrip("\n"))
        generate_source = input_code.rstrip("\n") + "\n\n" + ADAPTER_SOURCE
    candidate = CandidateProgram(
        library_prelude=prelude,
        main_source=solution_code,
        generate_input_source=generate_source,
        total_source="\n\n".join(pieces) + "\n",
    )
    try:
        check_candidate(candidate)
    except SchemaError as exc:
        raise StageError("task", str(exc)) from None
    return candidate, tuple(minted)


# ---------------------------------------------------------------------------
# the driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    version: str = "v1"
    rng_seed: int = 0
    seed_sample_size: int = 75
    retrieval_k: int = 4
    reprompt_budget: int = 0
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    runner: RunnerConfig = field(default_factory=RunnerConfig)
    stage_configs: dict[str, StageConfig] = field(
        default_factory=lambda: dict(DEFAULT_STAGE_CONFIGS)
    )

    def __post_init__(self) -> None:
        if self.version not in PIPELINE_VERSIONS:
            raise ValueError(f"unknown pipeline version {self.version!r}")
        if self.reprompt_budget < 0:
            raise ValueError("reprompt budget cannot be negative")


@dataclass(frozen=True)
class SourceFailure:
    source_id: str
    stage: str
    message: str


@dataclass
class PipelineResult:
    tasks: list[ArcTask]
    fidelity: FidelityReport
    failures: list[SourceFailure]
    new_object_seeds: list[ObjectSeed]


def derive_source_seed(rng_seed: int, source_id: str) -> int:
    digest = hashlib.sha256(f"{rng_seed}:{source_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _stage_provenance(config: PipelineConfig) -> tuple[dict, ...]:
    stages = ("step1", "step2", "step3") if config.version == "v1" else (
        "step1",
        "step2",
        "step3_1",
        "step3_2",
    )
    return tuple(
        {"stage": stage, "model_id": config.stage_configs[stage].model_id}
        for stage in sorted(stages)
    )


def _with_retries(action, budget: int):
    """Run ``action`` up to ``1 + budget`` times; re-raise the last failure."""
    attempts = 1 + budget
    for attempt in range(attempts):
        try:
            return action()
        except StageError:
            if attempt == attempts - 1:
                raise


def run_pipeline(
    provider,
    sources: list[GifSource],
    seed_pool: list[SeedExample],
    config: PipelineConfig | None = None,
    embedder=None,
    object_seeds: list[ObjectSeed] | None = None,
) -> PipelineResult:
    config = config or PipelineConfig()
    embedder = embedder or HashEmbedder()
    ids = [source.id for source in sources]
    if len(set(ids)) != len(ids):
        raise ValueError("source ids must be unique within one run")
    if not seed_pool and config.version == "v1":
        raise ValueError("the v1 route needs a non-empty seed example pool")

    example_index = index_seed_examples(embedder, seed_pool) if seed_pool else None
    catalog = build_seed_catalog(object_seeds or [])

    fidelity = FidelityReport()
    tasks: list[ArcTask] = []
    failures: list[SourceFailure] = []
    minted_seeds: list[ObjectSeed] = []

    for source in sources:
        rng = random.Random(derive_source_seed(config.rng_seed, source.id))

        def fail(stage: str, exc: StageError) -> None:
            fidelity.record(stage, False)
            failures.append(SourceFailure(source.id, stage, exc.message))

        try:
            abstraction = run_step1(provider, source)
        except StageError as exc:
            fail("abstraction", exc)
            continue
        fidelity.record("abstraction", True)

        try:
            sketch = _with_retries(
                lambda: run_step2(
                    provider, abstraction, seed_pool, rng, config.seed_sample_size
                ),
                config.reprompt_budget,
            )
        except StageError as exc:
            fail("sketch", exc)
            continue
        fidelity.record("sketch", True)

        try:
            if config.version == "v1":
                candidate = _with_retries(
                    lambda: run_step3_v1(
                        provider, sketch, example_index, embedder, config.retrieval_k
                    ),
                    config.reprompt_budget,
                )
                new_seeds: tuple[ObjectSeed, ...] = ()
            else:
                candidate, new_seeds = _with_retries(
                    lambda: run_step3_v2(provider, abstraction, sketch, catalog),
                    config.reprompt_budget,
                )
        except StageError as exc:
            fail("task", exc)
            continue
        fidelity.record("task", True)
        for seed in new_seeds:
            catalog[normalize_name(seed.name)] = seed
            minted_seeds.append(seed)

        validation = dataclasses.replace(
            config.validation,
            rng_seed=derive_source_seed(config.rng_seed, source.id + ":validation"),
        )
        outcome = validate_candidate(candidate.total_source, validation, config.runner)
        if not outcome.accepted:
            fidelity.record("validation", False)
            failures.append(
                SourceFailure(
                    source.id,
                    "validation",
                    f"{outcome.verdict.value}: {outcome.detail}",
                )
            )
            continue
        fidelity.record("validation", True)

        train, test = split_pairs(list(outcome.pairs))
        tasks.append(
            ArcTask(
                id=f"{source.id}-{config.version}",
                train=tuple(train),
                test=tuple(test),
                analogy=sketch.description,
                solution=candidate,
                sketch=sketch,
                provenance=Provenance(
                    source_id=source.id,
                    pipeline_version=config.version,
                    stage_configs=_stage_provenance(config),
                ),
                metrics=complexity_report(candidate),
                abstraction_ref=source.id,
            )
        )

    return PipelineResult(
        tasks=tasks, fidelity=fidelity, failures=failures, new_object_seeds=minted_seeds
    )
