"""Data model for tasks and their intermediate products.

The dataclasses here are deliberately dumb containers; every structural
rule (key presence, grid well-formedness, cardinalities) is enforced at
the parse/serialize boundary so that an in-memory value that came
through a parser is known-good.  Schema problems raise
:class:`SchemaError` carrying a JSON path like ``$.train[0].input``.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

from arcforge.grid import Grid, GridVerdict, grid_hash, validate_grid
from arcforge.metrics import ComplexityReport

OBJECT_KINDS = ("explicit", "implicit")
INTERACTION_TYPES = ("clear", "ambiguous", "constraint")

#: Soft bounds on abstraction shape; violations warn instead of failing.
OBJECT_COUNT_GUIDANCE = (2, 8)
INTERACTION_COUNT_GUIDANCE = (2, 6)


class SchemaError(ValueError):
    """A document violated the expected shape.  ``path`` is a JSON path."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class AbstractionShapeWarning(UserWarning):
    """Abstraction is structurally valid but outside the cardinality guidance."""


# ---------------------------------------------------------------------------
# dataclasses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridPair:
    input: Grid
    output: Grid


@dataclass(frozen=True)
class ObjectRef:
    name: str
    kind: str  # explicit | implicit


@dataclass(frozen=True)
class Interaction:
    objects_involved: tuple[str, ...]
    interaction_type: str  # clear | ambiguous | constraint
    interaction_parameters: tuple[str, ...]


@dataclass(frozen=True)
class VisualAbstraction:
    scenario: str
    visual_elements: tuple[str, ...]
    objects: tuple[ObjectRef, ...]
    static_patterns: tuple[str, ...]
    dynamic_patterns: tuple[str, ...]
    core_principles: tuple[str, ...]
    interactions: tuple[Interaction, ...]

    def explicit_objects(self) -> tuple[ObjectRef, ...]:
        return tuple(o for o in self.objects if o.kind == "explicit")


@dataclass(frozen=True)
class TaskSketch:
    concepts: tuple[str, ...]
    description: str


@dataclass(frozen=True)
class CandidateProgram:
    """A generated solution: shared-library prelude plus the two entry points."""

    library_prelude: str
    main_source: str
    generate_input_source: str
    total_source: str


@dataclass(frozen=True)
class Provenance:
    source_id: str
    pipeline_version: str
    stage_configs: tuple[dict, ...] = ()


@dataclass(frozen=True)
class ObjectSeed:
    """A reusable bitmap generator for one named explicit object."""

    name: str
    kind: str
    generator_source: str
    pixel_meaning: dict[str, str] = field(default_factory=dict)
    parameter_desc: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class SeedExample:
    """A worked concepts/description/program triple used to steer generation."""

    concepts: tuple[str, ...]
    description: str
    solution: CandidateProgram


@dataclass(frozen=True)
class ArcTask:
    id: str
    train: tuple[GridPair, ...]
    test: tuple[GridPair, ...]
    analogy: str
    solution: CandidateProgram
    sketch: TaskSketch
    provenance: Provenance | None = None
    metrics: ComplexityReport | None = None
    abstraction_ref: str | None = None

    @property
    def pairs(self) -> tuple[GridPair, ...]:
        return self.train + self.test


# ---------------------------------------------------------------------------
# low-level helpers
# ---------------------------------------------------------------------------


def _expect(obj: object, key: str, path: str) -> object:
    if not isinstance(obj, dict):
        raise SchemaError(path, f"expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing key")
    return obj[key]

def _string(value: object, path: str) -> str:
    if not isinstance(value, str):
        raise SchemaError(path, f"expected a string, got {type(value).__name__}")
    return value

def _string_list(value: object, path: str) -> tuple[str, ...]:
    if not isinstance(value, list):
        raise SchemaError(path, f"expected a list, got {type(value).__name__}")
    return tuple(_string(item, f"{path}[{i}]") for i, item in enumerate(value))

def _grid(value: object, path: str, role: str) -> Grid:
    verdict: GridVerdict = validate_grid(value, role=role)
    if not verdict.ok:
        raise SchemaError(path, f"{verdict.kind.value} grid: {verdict.detail}")
    return value  # type: ignore[return-value]

def _decode(data: bytes | str, path: str = "$") -> object:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(path, f"not valid JSON: {exc}") from None

def _canonical_bytes(doc: object) -> bytes:
    return (json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# candidate programs
# ---------------------------------------------------------------------------


def parse_candidate(obj: object, path: str = "$") -> CandidateProgram:
    program = CandidateProgram(
        library_prelude=_string(_expect(obj, "library", path), f"{path}.library"),
        main_source=_string(_expect(obj, "main_code", path), f"{path}.main_code"),
        generate_input_source=_string(
            _expect(obj, "generate_input_code", path), f"{path}.generate_input_code"
        ),
        total_source=_string(_expect(obj, "total_code", path), f"{path}.total_code"),
    )
    check_candidate(program, path)
    return program


def check_candidate(program: CandidateProgram, path: str = "$") -> None:
    """Structural invariants: non-empty source naming both entry points."""
    if not program.total_source.strip():
        raise SchemaError(f"{path}.total_code", "empty program source")
    for name in ("main", "generate_input"):
        if name not in program.total_source:
            raise SchemaError(f"{path}.total_code", f"entry point name {name!r} never occurs")


def candidate_to_dict(program: CandidateProgram) -> dict:
    return {
        "library": program.library_prelude,
        "main_code": program.main_source,
        "generate_input_code": program.generate_input_source,
        "total_code": program.total_source,
    }


# ---------------------------------------------------------------------------
# visual abstractions
# ---------------------------------------------------------------------------


def parse_abstraction(data: bytes | str | dict, path: str = "$") -> VisualAbstraction:
    """Parse the seven-field scene-abstraction document.

    Accepts either raw JSON text or an already-decoded mapping.  Object
    entries may spell their kind as ``type`` (the wire form) or ``kind``.
    Counts outside the usual guidance emit :class:`AbstractionShapeWarning`.
    """
    obj = data if isinstance(data, dict) else _decode(data, path)

    objects = []
    raw_objects = _expect(obj, "objects", path)
    if not isinstance(raw_objects, list):
        raise SchemaError(f"{path}.objects", "expected a list")
    for i, entry in enumerate(raw_objects):
        entry_path = f"{path}.objects[{i}]"
        name = _string(_expect(entry, "name", entry_path), f"{entry_path}.name")
        raw_kind = entry.get("type", entry.get("kind"))
        if raw_kind is None:
            raise SchemaError(f"{entry_path}.type", "missing key")
        kind = _string(raw_kind, f"{entry_path}.type")
        if kind not in OBJECT_KINDS:
            raise SchemaError(f"{entry_path}.type", f"{kind!r} is not one of {OBJECT_KINDS}")
        objects.append(ObjectRef(name=name, kind=kind))

    interactions = []
    raw_interactions = _expect(obj, "interactions", path)
    if not isinstance(raw_interactions, list):
        raise SchemaError(f"{path}.interactions", "expected a list")
    for i, entry in enumerate(raw_interactions):
        entry_path = f"{path}.interactions[{i}]"
        itype = _string(
            _expect(entry, "interaction_type", entry_path), f"{entry_path}.interaction_type"
        )
        if itype not in INTERACTION_TYPES:
            raise SchemaError(
                f"{entry_path}.interaction_type", f"{itype!r} is not one of {INTERACTION_TYPES}"
            )
        interactions.append(
            Interaction(
                objects_involved=_string_list(
                    _expect(entry, "objects_involved", entry_path),
                    f"{entry_path}.objects_involved",
                ),
                interaction_type=itype,
                interaction_parameters=_string_list(
                    _expect(entry, "interaction_parameters", entry_path),
                    f"{entry_path}.interaction_parameters",
                ),
            )
        )

    record = VisualAbstraction(
        scenario=_string(_expect(obj, "scenario", path), f"{path}.scenario"),
        visual_elements=_string_list(
            _expect(obj, "visual_elements", path), f"{path}.visual_elements"
        ),
        objects=tuple(objects),
        static_patterns=_string_list(
            _expect(obj, "static_patterns", path), f"{path}.static_patterns"
        ),
        dynamic_patterns=_string_list(
            _expect(obj, "dynamic_patterns", path), f"{path}.dynamic_patterns"
        ),
        core_principles=_string_list(
            _expect(obj, "core_principles", path), f"{path}.core_principles"
        ),
        interactions=tuple(interactions),
    )

    lo, hi = OBJECT_COUNT_GUIDANCE
    if not lo <= len(record.objects) <= hi:
        warnings.warn(
            f"abstraction lists {len(record.objects)} objects, outside the usual {lo}-{hi}",
            AbstractionShapeWarning,
            stacklevel=2,
        )
    lo, hi = INTERACTION_COUNT_GUIDANCE
    if not lo <= len(record.interactions) <= hi:
        warnings.warn(
            f"abstraction lists {len(record.interactions)} interactions, outside the usual {lo}-{hi}",
            AbstractionShapeWarning,
            stacklevel=2,
        )
    return record


def abstraction_to_dict(abstraction: VisualAbstraction) -> dict:
    return {
        "scenario": abstraction.scenario,
        "visual_elements": list(abstraction.visual_elements),
        "objects": [{"name": o.name, "type": o.kind} for o in abstraction.objects],
        "static_patterns": list(abstraction.static_patterns),
        "dynamic_patterns": list(abstraction.dynamic_patterns),
        "core_principles": list(abstraction.core_principles),
        "interactions": [
            {
                "objects_involved": list(i.objects_involved),
                "interaction_type": i.interaction_type,
                "interaction_parameters": list(i.interaction_parameters),
            }
            for i in abstraction.interactions
        ],
    }


# ---------------------------------------------------------------------------
# sketches
# ---------------------------------------------------------------------------


def parse_sketch(obj: object, path: str = "$") -> TaskSketch:
    concepts = _string_list(_expect(obj, "concepts", path), f"{path}.concepts")
    if not concepts:
        raise SchemaError(f"{path}.concepts", "must not be empty")
    description = _string(_expect(obj, "description", path), f"{path}.description")
    if not description.strip():
        raise SchemaError(f"{path}.description", "must not be empty")
    return TaskSketch(concepts=concepts, description=description)


def sketch_to_dict(sketch: TaskSketch) -> dict:
    return {"concepts": list(sketch.concepts), "description": sketch.description}


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


def _parse_pairs(value: object, path: str) -> tuple[GridPair, ...]:
    if not isinstance(value, list):
        raise SchemaError(path, f"expected a list, got {type(value).__name__}")
    pairs = []
    for i, entry in enumerate(value):
        entry_path = f"{path}[{i}]"
        pairs.append(
            GridPair(
                input=_grid(_expect(entry, "input", entry_path), f"{entry_path}.input", "input"),
                output=_grid(
                    _expect(entry, "output", entry_path), f"{entry_path}.output", "output"
                ),
            )
        )
    return tuple(pairs)


def split_pairs(pairs: list[GridPair] | tuple[GridPair, ...]) -> tuple[tuple[GridPair, ...], tuple[GridPair, ...]]:
    """Default train/test split: the last pair is the test pair."""
    if len(pairs) < 2:
        raise ValueError(f"need at least 2 pairs to split, got {len(pairs)}")
    return tuple(pairs[:-1]), (pairs[-1],)


def check_task(task: ArcTask, path: str = "$") -> None:
    """Cross-field invariants: K >= 2, both splits populated, inputs distinct."""
    if not task.id:
        raise SchemaError(f"{path}.id", "must not be empty")
    if not task.train:
        raise SchemaError(f"{path}.train", "must not be empty")
    if not task.test:
        raise SchemaError(f"{path}.test", "must not be empty")
    if len(task.pairs) < 2:
        raise SchemaError(f"{path}.train", "task needs at least 2 pairs")
    digests = [grid_hash(pair.input) for pair in task.pairs]
    if len(set(digests)) != len(digests):
        raise SchemaError(f"{path}.train", "duplicate input grids across pairs")
    check_candidate(task.solution, f"{path}.solution")


def parse_task_file(data: bytes | str) -> ArcTask:
    obj = _decode(data)
    if not isinstance(obj, dict):
        raise SchemaError("$", f"expected an object, got {type(obj).__name__}")

    provenance = None
    if "provenance" in obj:
        prov = obj["provenance"]
        stage_configs = prov.get("stage_configs", [])
        if not isinstance(stage_configs, list):
            raise SchemaError("$.provenance.stage_configs", "expected a list")
        provenance = Provenance(
            source_id=_string(_expect(prov, "source_id", "$.provenance"), "$.provenance.source_id"),
            pipeline_version=_string(
                _expect(prov, "pipeline_version", "$.provenance"), "$.provenance.pipeline_version"
            ),
            stage_configs=tuple(stage_configs),
        )

    metrics_report = None
    if "metrics" in obj:
        raw = obj["metrics"]
        for key in ("loc", "cyclomatic", "nesting_depth", "unique_ops"):
            value = _expect(raw, key, "$.metrics")
            if not isinstance(value, int) or isinstance(value, bool):
                raise SchemaError(f"$.metrics.{key}", "expected an integer")
        metrics_report = ComplexityReport(
            loc=raw["loc"],
            cyclomatic=raw["cyclomatic"],
            nesting_depth=raw["nesting_depth"],
            unique_ops=raw["unique_ops"],
        )

    abstraction_ref = None
    if "abstraction_ref" in obj:
        abstraction_ref = _string(obj["abstraction_ref"], "$.abstraction_ref")

    task = ArcTask(
        id=_string(_expect(obj, "id", "$"), "$.id"),
        train=_parse_pairs(_expect(obj, "train", "$"), "$.train"),
        test=_parse_pairs(_expect(obj, "test", "$"), "$.test"),
        analogy=_string(_expect(obj, "analogy", "$"), "$.analogy"),
        solution=parse_candidate(_expect(obj, "solution", "$"), "$.solution"),
        sketch=parse_sketch(_expect(obj, "sketch", "$"), "$.sketch"),
        provenance=provenance,
        metrics=metrics_report,
        abstraction_ref=abstraction_ref,
    )
    check_task(task)
    return task


def task_to_dict(task: ArcTask) -> dict:
    doc: dict = {
        "id": task.id,
        "train": [{"input": p.input, "output": p.output} for p in task.train],
        "test": [{"input": p.input, "output": p.output} for p in task.test],
        "analogy": task.analogy,
        "solution": candidate_to_dict(task.solution),
        "sketch": sketch_to_dict(task.sketch),
    }
    if task.provenance is not None:
        doc["provenance"] = {
            "source_id": task.provenance.source_id,
            "pipeline_version": task.provenance.pipeline_version,
            "stage_configs": list(task.provenance.stage_configs),
        }
    if task.metrics is not None:
        doc["metrics"] = task.metrics.as_dict()
    if task.abstraction_ref is not None:
        doc["abstraction_ref"] = task.abstraction_ref
    return doc


def serialize_task_file(task: ArcTask) -> bytes:
    """Canonical UTF-8 JSON bytes: sorted keys, no insignificant whitespace."""
    check_task(task)
    return _canonical_bytes(task_to_dict(task))


def load_plain_pairs(data: bytes | str) -> tuple[tuple[GridPair, ...], tuple[GridPair, ...]]:
    """Lenient loader for bare ``{train, test}`` puzzle files.

    Grids are shape-checked (rectangular, 0-9) but none of the richer task
    invariants apply; this is what dataset statistics run on.
    """
    obj = _decode(data)
    train = _parse_pairs(_expect(obj, "train", "$"), "$.train")
    raw_test = obj.get("test", [])
    test = _parse_pairs(raw_test, "$.test") if raw_test else ()
    return train, test


# ---------------------------------------------------------------------------
# seed examples and object seeds
# ---------------------------------------------------------------------------


def parse_seed_examples(data: bytes | str) -> list[SeedExample]:
    obj = _decode(data)
    if not isinstance(obj, list):
        raise SchemaError("$", "expected a list of seed examples")
    out = []
    for i, entry in enumerate(obj):
        path = f"$[{i}]"
        out.append(
            SeedExample(
                concepts=_string_list(_expect(entry, "concepts", path), f"{path}.concepts"),
                description=_string(_expect(entry, "description", path), f"{path}.description"),
                solution=parse_candidate(_expect(entry, "solution", path), f"{path}.solution"),
            )
        )
    return out


def parse_object_seeds(data: bytes | str) -> list[ObjectSeed]:
    obj = _decode(data)
    if not isinstance(obj, list):
        raise SchemaError("$", "expected a list of object seeds")
    out = []
    for i, entry in enumerate(obj):
        path = f"$[{i}]"
        kind = _string(_expect(entry, "kind", path), f"{path}.kind")
        if kind not in OBJECT_KINDS:
            raise SchemaError(f"{path}.kind", f"{kind!r} is not one of {OBJECT_KINDS}")
        out.append(
            ObjectSeed(
                name=_string(_expect(entry, "name", path), f"{path}.name"),
                kind=kind,
                generator_source=_string(
                    _expect(entry, "generator_source", path), f"{path}.generator_source"
                ),
                pixel_meaning=dict(entry.get("pixel_meaning", {})),
                parameter_desc=dict(entry.get("parameter_desc", {})),
            )
        )
    return out


def object_seed_to_dict(seed: ObjectSeed) -> dict:
    return {
        "name": seed.name,
        "kind": seed.kind,
        "generator_source": seed.generator_source,
        "pixel_meaning": dict(seed.pixel_meaning),
        "parameter_desc": dict(seed.parameter_desc),
    }


# ---------------------------------------------------------------------------
# dataset manifests
# ---------------------------------------------------------------------------


def file_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def manifest_line(path: str, task_id: str, data: bytes) -> str:
    return json.dumps(
        {"path": path, "id": task_id, "digest": file_digest(data)},
        sort_keys=True,
        separators=(",", ":"),
    )


def parse_manifest(data: bytes | str) -> list[dict]:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    entries = []
    for n, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        entry = _decode(line, path=f"$line{n}")
        for key in ("path", "id", "digest"):
            _expect(entry, key, f"$line{n}")
        entries.append(entry)
    return entries
