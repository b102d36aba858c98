"""Pipeline tests: templates, sources, stage runners, and the replay run."""

import json
import pathlib
import random

import pytest
from PIL import Image

from arcforge.gateway import (
    Attachment,
    ChatReply,
    ReplayMiss,
    ReplayProvider,
)
from arcforge.model import (
    Interaction,
    ObjectRef,
    ObjectSeed,
    TaskSketch,
    parse_seed_examples,
    serialize_task_file,
    VisualAbstraction,
)
from arcforge.pipeline import (
    ADAPTER_SOURCE,
    GifSource,
    PipelineConfig,
    PromptTemplate,
    StageError,
    TEMPLATE_NAMES,
    TemplateError,
    abstraction_block,
    compose_story,
    derive_source_seed,
    load_gif_source,
    load_precomputed_source,
    load_template,
    parse_sketch_reply,
    precomputed_source,
    run_pipeline,
    run_step1,
    run_step3_v2,
    sample_seed_examples,
    seed_example_block,
    seed_function_name,
)
from arcforge.retrieval import build_seed_catalog

FIXTURES = pathlib.Path(__file__).parent / "fixtures" / "pipeline"


# ---------------------------------------------------------------------------
# prompt templates
# ---------------------------------------------------------------------------

GOOD_TEMPLATE = """\
placeholders: thing, count
--- system ---
You describe a {thing}.
Reply as JSON like {"kind": "demo"}.
--- user ---
There are {count} of them.
"""


class TestPromptTemplate:
    def test_parse_and_render(self):
        template = PromptTemplate.parse("demo", GOOD_TEMPLATE)
        assert template.placeholders == frozenset({"thing", "count"})
        system, user = template.render(thing="ball", count="3")
        assert system == 'You describe a ball.\nReply as JSON like {"kind": "demo"}.'
        assert user == "There are 3 of them."

    def test_literal_braces_survive(self):
        template = PromptTemplate.parse("demo", GOOD_TEMPLATE)
        system, _ = template.render(thing="x", count="1")
        assert '{"kind": "demo"}' in system

    def test_single_pass_never_rescans_values(self):
        template = PromptTemplate.parse("demo", GOOD_TEMPLATE)
        system, user = template.render(thing="{count} in disguise", count="7")
        # the brace-bearing value is inserted verbatim, not expanded again
        assert "{count} in disguise" in system
        assert user == "There are 7 of them."

    def test_code_bearing_value_is_safe(self):
        template = PromptTemplate.parse("demo", GOOD_TEMPLATE)
        code = "pairs = {x for x in range(3)}"
        system, _ = template.render(thing=code, count="0")
        assert code in system

    def test_missing_header_rejected(self):
        with pytest.raises(TemplateError, match="placeholders"):
            PromptTemplate.parse("bad", "--- system ---\nhi\n--- user ---\nyo\n")

    def test_missing_markers_rejected(self):
        with pytest.raises(TemplateError, match="section markers"):
            PromptTemplate.parse("bad", "placeholders:\njust prose\n")

    def test_user_before_system_rejected(self):
        text = "placeholders:\n--- user ---\nu\n--- system ---\ns\n"
        with pytest.raises(TemplateError, match="precede"):
            PromptTemplate.parse("bad", text)

    def test_undeclared_placeholder_rejected(self):
        text = "placeholders: a\n--- system ---\n{a} {b}\n--- user ---\nu\n"
        with pytest.raises(TemplateError, match=r"undeclared placeholders \['b'\]"):
            PromptTemplate.parse("bad", text)

    def test_unused_placeholder_rejected(self):
        text = "placeholders: a, b\n--- system ---\n{a}\n--- user ---\nu\n"
        with pytest.raises(TemplateError, match=r"never used \['b'\]"):
            PromptTemplate.parse("bad", text)

    def test_placeholderless_template_allowed(self):
        text = "placeholders:\n--- system ---\ns\n--- user ---\nu\n"
        template = PromptTemplate.parse("bare", text)
        assert template.render() == ("s", "u")

    def test_render_missing_value(self):
        template = PromptTemplate.parse("demo", GOOD_TEMPLATE)
        with pytest.raises(TemplateError, match=r"missing values for \['count'\]"):
            template.render(thing="ball")

    def test_render_unexpected_value(self):
        template = PromptTemplate.parse("demo", GOOD_TEMPLATE)
        with pytest.raises(TemplateError, match=r"unexpected values \['extra'\]"):
            template.render(thing="a", count="1", extra="nope")

    def test_render_rejects_non_string(self):
        template = PromptTemplate.parse("demo", GOOD_TEMPLATE)
        with pytest.raises(TemplateError, match="must be a string"):
            template.render(thing="a", count=3)


EXPECTED_PLACEHOLDERS = {
    "step1": {"frame_count"},
    "step2": {"seed_block", "abstraction_block"},
    "step3_v1": {"examples_block", "concepts", "description"},
    "step3_1": {"object_name", "scenario"},
    "step3_2": {"story", "seed_functions", "concepts", "description"},
    "judge": {"analogy_a", "analogy_b"},
    "classifier": {"type_list", "concepts", "description"},
}


@pytest.mark.parametrize("name", TEMPLATE_NAMES)
def test_packaged_template_loads(name):
    template = load_template(name)
    assert template.placeholders == frozenset(EXPECTED_PLACEHOLDERS[name])
    assert template.system and template.user


def test_template_names_covered():
    assert set(TEMPLATE_NAMES) == set(EXPECTED_PLACEHOLDERS)


def test_unknown_template_rejected():
    with pytest.raises(TemplateError, match="unknown template"):
        load_template("step99")


def test_step2_tracks_full_transformation():
    template = load_template("step2")
    text = template.system + "\n" + template.user
    assert (
        "capture the entire transformation process from the initial state "
        "to the final state"
    ) in text


def test_step2_pins_output_format():
    template = load_template("step2")
    text = template.system + "\n" + template.user
    assert "# concepts:" in text
    assert "# description:" in text


# ---------------------------------------------------------------------------
# sources
# ---------------------------------------------------------------------------

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def write_gif(path: pathlib.Path, n_frames: int, size=(8, 6)) -> None:
    colors = [(255, 0, 0), (0, 255, 0), (0, 0, 255), (255, 255, 0)]
    frames = [
        Image.new("RGB", size, colors[i % len(colors)]) for i in range(n_frames)
    ]
    frames[0].save(
        path, save_all=True, append_images=frames[1:], duration=50, loop=0
    )


class TestGifLoading:
    def test_few_frames_all_kept(self, tmp_path):
        path = tmp_path / "bounce.gif"
        write_gif(path, 3)
        source = load_gif_source(path)
        assert source.id == "bounce"
        assert source.origin == "local-file"
        assert source.abstraction is None
        assert len(source.frames) == 3

    def test_many_frames_sampled_down(self, tmp_path):
        path = tmp_path / "long.gif"
        write_gif(path, 20)
        source = load_gif_source(path)
        assert len(source.frames) == 8

    def test_frames_reencoded_as_png(self, tmp_path):
        path = tmp_path / "clip.gif"
        write_gif(path, 4)
        source = load_gif_source(path)
        for frame in source.frames:
            assert frame.media_type == "image/png"
            assert frame.data.startswith(PNG_MAGIC)

    def test_sampling_keeps_endpoints(self, tmp_path):
        import io as _io

        path = tmp_path / "caps.gif"
        write_gif(path, 20)
        source = load_gif_source(path)

        def pixel(att):
            with Image.open(_io.BytesIO(att.data)) as img:
                return img.convert("RGB").getpixel((0, 0))

        # frame 0 is red; frame 19 is 19 % 4 == 3, yellow
        assert pixel(source.frames[0]) == (255, 0, 0)
        assert pixel(source.frames[-1]) == (255, 255, 0)

    def test_loading_is_deterministic(self, tmp_path):
        path = tmp_path / "same.gif"
        write_gif(path, 5)
        first = load_gif_source(path)
        second = load_gif_source(path)
        assert [f.data for f in first.frames] == [f.data for f in second.frames]

    def test_single_frame_image(self, tmp_path):
        path = tmp_path / "still.gif"
        Image.new("RGB", (4, 4), (0, 255, 0)).save(path)
        source = load_gif_source(path)
        assert len(source.frames) == 1

    def test_max_frames_override(self, tmp_path):
        path = tmp_path / "trim.gif"
        write_gif(path, 10)
        assert len(load_gif_source(path, max_frames=4).frames) == 4


def test_precomputed_source_roundtrip():
    path = FIXTURES / "sources" / "amp-gain.json"
    source = load_precomputed_source(path)
    assert source.id == "amp-gain"
    assert source.origin == "precomputed-abstraction"
    assert source.frames == ()
    assert source.abstraction.scenario.startswith("a signal pulse")


# ---------------------------------------------------------------------------
# prompt blocks
# ---------------------------------------------------------------------------


def make_abstraction(**overrides) -> VisualAbstraction:
    base = dict(
        scenario="a ball bounces on the floor",
        visual_elements=("a ball", "a flat floor"),
        objects=(ObjectRef("ball", "explicit"), ObjectRef("gravity", "implicit")),
        static_patterns=("the floor never moves",),
        dynamic_patterns=("the ball falls and rebounds",),
        core_principles=("height decays each bounce",),
        interactions=(
            Interaction(("ball", "floor"), "clear", ("elastic bounce",)),
            Interaction(("gravity", "ball"), "constraint", ()),
        ),
    )
    base.update(overrides)
    return VisualAbstraction(**base)


class TestAbstractionBlock:
    def test_six_fields_rendered(self):
        block = abstraction_block(make_abstraction())
        lines = block.splitlines()
        assert len(lines) == 6
        labels = [line.split(":", 1)[0] for line in lines]
        assert labels == [
            "- scenario",
            "- objects",
            "- static_patterns",
            "- dynamic_patterns",
            "- core_principles",
            "- interactions",
        ]

    def test_visual_elements_left_out(self):
        block = abstraction_block(make_abstraction())
        assert "visual_elements" not in block
        assert "flat floor" not in block

    def test_objects_carry_kind(self):
        block = abstraction_block(make_abstraction())
        assert "ball (explicit), gravity (implicit)" in block

    def test_interactions_carry_type_and_parameters(self):
        block = abstraction_block(make_abstraction())
        assert "ball and floor [clear] (elastic bounce)" in block
        assert "gravity and ball [constraint]" in block

    def test_empty_lists_spelled_out(self):
        block = abstraction_block(
            make_abstraction(static_patterns=(), interactions=())
        )
        assert "- static_patterns: none noted" in block
        assert "- interactions: none noted" in block


class TestComposeStory:
    def test_story_mentions_explicit_objects_only(self):
        story = compose_story(make_abstraction())
        assert story.startswith("a ball bounces on the floor.")
        assert "Objects: ball." in story
        assert "gravity" not in story.split("Interactions:")[0].split("Objects:")[1]

    def test_story_summarizes_interactions(self):
        story = compose_story(make_abstraction())
        assert "ball and floor — clear (elastic bounce)" in story
        assert "gravity and ball — constraint" in story

    def test_story_without_interactions(self):
        story = compose_story(
            make_abstraction(
                objects=(ObjectRef("ball", "explicit"),), interactions=()
            )
        )
        assert story == "a ball bounces on the floor. Objects: ball."


# ---------------------------------------------------------------------------
# seed example sampling
# ---------------------------------------------------------------------------


def load_pool():
    return parse_seed_examples((FIXTURES / "seed_examples.json").read_text())


class TestSeedSampling:
    def test_same_rng_same_sample(self):
        pool = load_pool()
        first = sample_seed_examples(pool, random.Random(11), 3)
        second = sample_seed_examples(pool, random.Random(11), 3)
        assert [s.description for s in first] == [s.description for s in second]

    def test_count_capped_at_pool_size(self):
        pool = load_pool()
        sampled = sample_seed_examples(pool, random.Random(0), 75)
        assert len(sampled) == len(pool)
        assert {s.description for s in sampled} == {s.description for s in pool}

    def test_partial_sample_has_no_repeats(self):
        pool = load_pool()
        sampled = sample_seed_examples(pool, random.Random(5), 4)
        assert len(sampled) == 4
        assert len({id(s) for s in sampled}) == 4

    def test_block_format(self):
        pool = load_pool()
        block = seed_example_block(pool[:2])
        chunks = block.split("\n\n")
        assert len(chunks) >= 2
        assert block.startswith("# concepts: ")
        assert "\n# description: " in block
        assert "def main" in block


# ---------------------------------------------------------------------------
# sketch reply parsing
# ---------------------------------------------------------------------------


class TestParseSketchReply:
    def test_canonical_reply(self):
        sketch = parse_sketch_reply(
            "# concepts: gravity, stacking\n"
            "# description: Things fall down and pile up.\n"
        )
        assert sketch.concepts == ("gravity", "stacking")
        assert sketch.description == "Things fall down and pile up."

    def test_description_may_wrap_lines(self):
        sketch = parse_sketch_reply(
            "# concepts: waves\n"
            "# description: The stripe drifts right\n"
            "and wraps around the edge.\n"
            "\n"
            "Hope this helps!\n"
        )
        assert sketch.description == (
            "The stripe drifts right and wraps around the edge."
        )

    def test_code_fence_stops_description(self):
        sketch = parse_sketch_reply(
            "# concepts: echo\n"
            "# description: One line only.\n"
            "```python\nprint('not part of it')\n```\n"
        )
        assert sketch.description == "One line only."

    def test_surrounding_prose_ignored(self):
        sketch = parse_sketch_reply(
            "Sure! Here is the sketch you asked for:\n\n"
            "  # concepts: rotation\n"
            "  # description: The grid turns a quarter turn.\n\n"
            "Let me know if you want another.\n"
        )
        assert sketch.concepts == ("rotation",)
        assert sketch.description == "The grid turns a quarter turn."

    def test_prose_only_reply_fails(self):
        with pytest.raises(StageError, match="# concepts:"):
            parse_sketch_reply("This animation is about corruption spreading.")

    def test_missing_description_fails(self):
        with pytest.raises(StageError, match="# description:"):
            parse_sketch_reply("# concepts: one, two\n")

    def test_empty_concepts_list_fails(self):
        with pytest.raises(StageError, match="# concepts:"):
            parse_sketch_reply("# concepts:\n# description: something\n")


# ---------------------------------------------------------------------------
# step 1 (abstraction)
# ---------------------------------------------------------------------------


class QueueProvider:
    """Hands out canned texts per stage, in order; logs every call."""

    def __init__(self):
        self.queues = {}
        self.calls = []

    def push(self, stage, text):
        self.queues.setdefault(stage, []).append(text)
        return self

    def complete(self, request):
        self.calls.append(request.stage)
        queue = self.queues.get(request.stage)
        if not queue:
            raise AssertionError(f"no canned reply queued for stage {request.stage!r}")
        return ChatReply(text=queue.pop(0), model_id="stub")


ABSTRACTION_DOC = {
    "scenario": "a ball bounces on the floor",
    "visual_elements": ["a ball", "a floor"],
    "objects": [
        {"name": "ball", "type": "explicit"},
        {"name": "gravity", "type": "implicit"},
    ],
    "static_patterns": ["the floor never moves"],
    "dynamic_patterns": ["the ball falls and rebounds"],
    "core_principles": ["height decays each bounce"],
    "interactions": [
        {
            "objects_involved": ["ball", "floor"],
            "interaction_type": "clear",
            "interaction_parameters": ["elastic bounce"],
        },
        {
            "objects_involved": ["gravity", "ball"],
            "interaction_type": "constraint",
            "interaction_parameters": [],
        },
    ],
}


def fake_frame() -> Attachment:
    return Attachment(media_type="image/png", data=PNG_MAGIC + b"stub")


class TestRunStep1:
    def test_precomputed_summary_bypasses_provider(self):
        source = precomputed_source("demo", make_abstraction())
        provider = QueueProvider()  # would raise on any call
        result = run_step1(provider, source)
        assert result is source.abstraction
        assert provider.calls == []

    def test_frames_go_to_provider(self):
        provider = QueueProvider().push(
            "step1", "Summary follows.\n" + json.dumps(ABSTRACTION_DOC)
        )
        source = GifSource(id="clip", origin="local-file", frames=(fake_frame(),))
        result = run_step1(provider, source)
        assert provider.calls == ["step1"]
        assert result.scenario == "a ball bounces on the floor"
        assert [o.name for o in result.explicit_objects()] == ["ball"]

    def test_reply_without_json_fails(self):
        provider = QueueProvider().push("step1", "no structure here")
        source = GifSource(id="clip", origin="local-file", frames=(fake_frame(),))
        with pytest.raises(StageError):
            run_step1(provider, source)

    def test_empty_source_rejected(self):
        source = GifSource(id="hollow", origin="local-file", frames=())
        with pytest.raises(StageError, match="no frames"):
            run_step1(QueueProvider(), source)


# ---------------------------------------------------------------------------
# step 3 v2 (object-seed composition)
# ---------------------------------------------------------------------------

BALL_SEED_FN = """\
def ball_input_bitmap_generation(height=None, width=None):
    import random
    h = height or random.randint(3, 6)
    w = width or random.randint(4, 7)
    grid = [[0] * w for _ in range(h)]
    grid[random.randint(0, h - 1)][random.randint(0, w // 2 - 1)] = random.randint(1, 9)
    return grid
"""

MIRROR_MAIN = """\
def main(grid):
    return [row[::-1] for row in grid]
"""

CALL_BALL = """\
def build_example():
    return ball_input_bitmap_generation()
"""


def bitmap_seed_reply(function_code: str) -> str:
    return json.dumps(
        {
            "bitmap": [[0, 3], [0, 0]],
            "pixel_meaning": {"3": "the ball"},
            "parameter_desc": {"height": "rows", "width": "columns"},
            "function_code": function_code,
            "sample_execute_code": "ball_input_bitmap_generation()",
        }
    )


def program_v2_reply(input_code: str, solution_code: str) -> str:
    return json.dumps(
        {
            "input_bitmap_generation_code": input_code,
            "used_concept": "mirror symmetry",
            "solution_code": solution_code,
        }
    )


BALL_SKETCH = TaskSketch(
    concepts=("mirror symmetry",),
    description="The grid is mirrored left to right.",
)


def ball_seed() -> ObjectSeed:
    return ObjectSeed(
        name="ball",
        kind="explicit",
        generator_source=BALL_SEED_FN,
        pixel_meaning={"3": "the ball"},
        parameter_desc={"height": "rows", "width": "columns"},
    )


class TestRunStep3V2:
    def test_catalog_hit_skips_minting(self):
        provider = QueueProvider().push(
            "step3_2", program_v2_reply(CALL_BALL, MIRROR_MAIN)
        )
        catalog = build_seed_catalog([ball_seed()])
        candidate, minted = run_step3_v2(
            provider, make_abstraction(), BALL_SKETCH, catalog
        )
        assert provider.calls == ["step3_2"]
        assert minted == ()
        assert "ball_input_bitmap_generation" in candidate.total_source

    def test_catalog_hit_is_name_normalized(self):
        provider = QueueProvider().push(
            "step3_2", program_v2_reply(CALL_BALL, MIRROR_MAIN)
        )
        catalog = build_seed_catalog([ball_seed()])
        abstraction = make_abstraction(
            objects=(ObjectRef("  Ball ", "explicit"),)
        )
        _, minted = run_step3_v2(provider, abstraction, BALL_SKETCH, catalog)
        assert minted == ()
        assert provider.calls == ["step3_2"]

    def test_catalog_miss_mints_a_seed(self):
        provider = (
            QueueProvider()
            .push("step3_1", bitmap_seed_reply(BALL_SEED_FN))
            .push("step3_2", program_v2_reply(CALL_BALL, MIRROR_MAIN))
        )
        candidate, minted = run_step3_v2(provider, make_abstraction(), BALL_SKETCH, {})
        assert provider.calls == ["step3_1", "step3_2"]
        assert [seed.name for seed in minted] == ["ball"]
        assert minted[0].kind == "explicit"
        assert minted[0].pixel_meaning == {"3": "the ball"}
        assert "def ball_input_bitmap_generation" in candidate.library_prelude

    def test_duplicate_object_names_minted_once(self):
        provider = (
            QueueProvider()
            .push("step3_1", bitmap_seed_reply(BALL_SEED_FN))
            .push("step3_2", program_v2_reply(CALL_BALL, MIRROR_MAIN))
        )
        abstraction = make_abstraction(
            objects=(ObjectRef("ball", "explicit"), ObjectRef("Ball", "explicit"))
        )
        _, minted = run_step3_v2(provider, abstraction, BALL_SKETCH, {})
        assert provider.calls == ["step3_1", "step3_2"]
        assert len(minted) == 1

    def test_seed_function_needs_suffix(self):
        wrong = BALL_SEED_FN.replace("ball_input_bitmap_generation", "make_ball")
        provider = QueueProvider().push("step3_1", bitmap_seed_reply(wrong))
        with pytest.raises(StageError, match="does not end with"):
            run_step3_v2(provider, make_abstraction(), BALL_SKETCH, {})

    def test_unused_seed_function_rejected(self):
        bad_input = "def build_example():\n    return [[1]]\n"
        provider = QueueProvider().push(
            "step3_2", program_v2_reply(bad_input, MIRROR_MAIN)
        )
        catalog = build_seed_catalog([ball_seed()])
        with pytest.raises(StageError, match="never invokes"):
            run_step3_v2(provider, make_abstraction(), BALL_SKETCH, catalog)

    def test_adapter_appended_when_entry_point_missing(self):
        provider = QueueProvider().push(
            "step3_2", program_v2_reply(CALL_BALL, MIRROR_MAIN)
        )
        catalog = build_seed_catalog([ball_seed()])
        candidate, _ = run_step3_v2(provider, make_abstraction(), BALL_SKETCH, catalog)
        assert "def generate_input" in candidate.total_source
        assert candidate.total_source.rstrip("\n").endswith(
            ADAPTER_SOURCE.rstrip("\n")
        )

    def test_adapter_skipped_when_reply_has_entry_point(self):
        input_code = (
            CALL_BALL + "\ndef generate_input():\n    return build_example()\n"
        )
        provider = QueueProvider().push(
            "step3_2", program_v2_reply(input_code, MIRROR_MAIN)
        )
        catalog = build_seed_catalog([ball_seed()])
        candidate, _ = run_step3_v2(provider, make_abstraction(), BALL_SKETCH, catalog)
        assert candidate.total_source.count("def generate_input") == 1
        assert "random.choice(builders)" not in candidate.total_source

    def test_no_explicit_objects_rejected(self):
        abstraction = make_abstraction(objects=(ObjectRef("gravity", "implicit"),))
        with pytest.raises(StageError, match="no explicit objects"):
            run_step3_v2(QueueProvider(), abstraction, BALL_SKETCH, {})


def test_seed_function_name_extraction():
    assert seed_function_name(BALL_SEED_FN) == "ball_input_bitmap_generation"
    assert seed_function_name("x = 1\ndef  oddly_spaced (a):\n    pass") == "oddly_spaced"
    with pytest.raises(ValueError, match="no function"):
        seed_function_name("x = 1\n")


# ---------------------------------------------------------------------------
# seed derivation
# ---------------------------------------------------------------------------


class TestDeriveSourceSeed:
    def test_deterministic(self):
        assert derive_source_seed(0, "amp-gain") == derive_source_seed(0, "amp-gain")

    def test_varies_by_source(self):
        assert derive_source_seed(0, "a") != derive_source_seed(0, "b")

    def test_varies_by_run_seed(self):
        assert derive_source_seed(0, "a") != derive_source_seed(1, "a")

    def test_fits_in_64_bits(self):
        value = derive_source_seed(12345, "anything")
        assert 0 <= value < 2**64


# ---------------------------------------------------------------------------
# the driver
# ---------------------------------------------------------------------------


def fixture_sources():
    paths = sorted((FIXTURES / "sources").glob("*.json"))
    return [load_precomputed_source(path) for path in paths]


def v1_config() -> PipelineConfig:
    return PipelineConfig(version="v1", rng_seed=0)


class TestRunPipeline:
    def test_duplicate_source_ids_rejected(self):
        source = precomputed_source("dup", make_abstraction())
        with pytest.raises(ValueError, match="unique"):
            run_pipeline(QueueProvider(), [source, source], load_pool(), v1_config())

    def test_v1_needs_seed_pool(self):
        source = precomputed_source("solo", make_abstraction())
        with pytest.raises(ValueError, match="seed example pool"):
            run_pipeline(QueueProvider(), [source], [], v1_config())

    def test_sketch_failure_isolates_later_stages(self):
        provider = QueueProvider().push("step2", "no headers in this reply")
        source = precomputed_source("lone", make_abstraction())
        result = run_pipeline(provider, [source], load_pool(), v1_config())
        assert result.tasks == []
        assert [(f.source_id, f.stage) for f in result.failures] == [("lone", "sketch")]
        report = result.fidelity.as_dict()
        assert report["abstraction"] == {"attempts": 1, "successes": 1, "rate": "100.00%"}
        assert report["sketch"] == {"attempts": 1, "successes": 0, "rate": "0.00%"}
        assert report["task"] == {"attempts": 0, "successes": 0, "rate": "—"}
        assert report["validation"] == {"attempts": 0, "successes": 0, "rate": "—"}
        assert provider.calls == ["step2"]

    def test_precomputed_bypass_counts_as_attempt_and_success(self):
        provider = QueueProvider().push("step2", "still not a sketch")
        source = precomputed_source("skip", make_abstraction())
        result = run_pipeline(provider, [source], load_pool(), v1_config())
        assert result.fidelity.as_dict()["abstraction"]["attempts"] == 1
        assert result.fidelity.as_dict()["abstraction"]["successes"] == 1
        assert "step1" not in provider.calls

    def test_replay_miss_is_fatal(self, tmp_path):
        provider = ReplayProvider(tmp_path)  # empty fixture dir
        with pytest.raises(ReplayMiss):
            run_pipeline(provider, fixture_sources(), load_pool(), v1_config())

    def test_v2_route_end_to_end(self):
        sketch_reply = (
            "# concepts: mirror symmetry\n"
            "# description: The grid is mirrored left to right.\n"
        )
        provider = (
            QueueProvider()
            .push("step2", sketch_reply)
            .push("step3_1", bitmap_seed_reply(BALL_SEED_FN))
            .push("step3_2", program_v2_reply(CALL_BALL, MIRROR_MAIN))
        )
        source = precomputed_source("ball-scene", make_abstraction())
        config = PipelineConfig(version="v2", rng_seed=0)
        result = run_pipeline(provider, [source], [], config)
        assert provider.calls == ["step2", "step3_1", "step3_2"]
        assert [task.id for task in result.tasks] == ["ball-scene-v2"]
        assert [seed.name for seed in result.new_object_seeds] == ["ball"]
        task = result.tasks[0]
        assert task.provenance.pipeline_version == "v2"
        assert [c["stage"] for c in task.provenance.stage_configs] == [
            "step1",
            "step2",
            "step3_1",
            "step3_2",
        ]
        report = result.fidelity.as_dict()
        for stage in ("abstraction", "sketch", "task", "validation"):
            assert report[stage] == {"attempts": 1, "successes": 1, "rate": "100.00%"}

    def test_v2_catalog_accrues_between_sources(self):
        sketch_reply = (
            "# concepts: mirror symmetry\n"
            "# description: The grid is mirrored left to right.\n"
        )
        provider = (
            QueueProvider()
            .push("step2", sketch_reply)
            .push("step2", sketch_reply)
            .push("step3_1", bitmap_seed_reply(BALL_SEED_FN))
            .push("step3_2", program_v2_reply(CALL_BALL, MIRROR_MAIN))
            .push("step3_2", program_v2_reply(CALL_BALL, MIRROR_MAIN))
        )
        sources = [
            precomputed_source("first", make_abstraction()),
            precomputed_source("second", make_abstraction()),
        ]
        config = PipelineConfig(version="v2", rng_seed=0)
        result = run_pipeline(provider, sources, [], config)
        # the second source reuses the seed minted for the first
        assert provider.calls.count("step3_1") == 1
        assert len(result.new_object_seeds) == 1
        assert [task.id for task in result.tasks] == ["first-v2", "second-v2"]


# ---------------------------------------------------------------------------
# the recorded replay run
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def result():
    provider = ReplayProvider(FIXTURES / "replies")
    return run_pipeline(provider, fixture_sources(), load_pool(), v1_config())


class TestReplayGolden:
    def test_expected_tasks_come_out(self, result):
        assert [task.id for task in result.tasks] == [
            "amp-gain-v1",
            "pendulum-arc-v1",
        ]

    def test_task_files_match_goldens_byte_for_byte(self, result):
        for task in result.tasks:
            golden = (FIXTURES / "golden" / f"{task.id}.json").read_bytes()
            assert serialize_task_file(task) == golden

    def test_fidelity_matches_golden(self, result):
        golden = json.loads((FIXTURES / "golden" / "fidelity.json").read_text())
        assert result.fidelity.as_dict() == golden

    def test_conditional_rates_exact(self, result):
        rates = {
            stage: cell["rate"] for stage, cell in result.fidelity.as_dict().items()
        }
        assert rates == {
            "abstraction": "100.00%",
            "sketch": "66.67%",
            "task": "100.00%",
            "validation": "100.00%",
        }

    def test_single_failure_recorded(self, result):
        assert [(f.source_id, f.stage) for f in result.failures] == [
            ("glitch-stripes", "sketch")
        ]

    def test_no_unexpected_reply_fixtures(self):
        recorded = sorted(
            path.name for path in (FIXTURES / "replies").glob("*.json")
        )
        golden = json.loads(
            (FIXTURES / "golden" / "reply_digests.json").read_text()
        )
        assert recorded == golden

    def test_tasks_survive_the_validation_gate(self, result):
        from arcforge.validator import ValidationConfig, validate_candidate

        for task in result.tasks:
            outcome = validate_candidate(
                task.solution.total_source,
                ValidationConfig(rng_seed=7),
            )
            assert outcome.accepted, (task.id, outcome.verdict, outcome.detail)
