import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _synth import make_task
from sprag.corpus import DEFAULT_SCALE
from sprag.generator import (
    SYSTEM_PROMPT,
    GenerationConfig,
    GenerationError,
    GeneratorTransportError,
    HttpGeneratorBackend,
    MedianStubGenerator,
    PromptBundle,
    ScriptedGenerator,
    build_prompt,
    format_similar_tasks,
    format_sp,
    generate,
    median_of_references,
    parse_story_point,
    reference_story_points,
    snap_to_scale,
    spell_count,
)


class TestFormatSimilarTasks:
    def test_single_entry_fields(self):
        task = make_task("P", 1, "T", "D", 3.0)
        block = format_similar_tasks([(task, 0.9)])
        assert block.startswith("1. Task Title")
        assert "T" in block and "D" in block and "Story Point: 3" in block

    def test_numbered_in_given_order(self):
        tasks = [(make_task("P", i, f"title{i}", f"desc{i}", 5.0), 1.0 - i / 10) for i in range(1, 4)]
        block = format_similar_tasks(tasks)
        assert block.index("1. Task Title") < block.index("2. Task Title") < block.index("3. Task Title")
        assert block.index("title1") < block.index("title2") < block.index("title3")

    def test_half_point_rendered_as_decimal(self):
        block = format_similar_tasks([(make_task("P", 1, "T", "D", 0.5), 0.5)])
        assert "Story Point: 0.5" in block

    def test_integer_rendered_without_decimal(self):
        assert "Story Point: 8" in format_similar_tasks([(make_task("P", 1, "T", "D", 8.0), 0.1)])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            format_similar_tasks([])


class TestBuildPrompt:
    def make(self, k=3, title="New task", description="Something broke"):
        similar = format_similar_tasks([(make_task("P", i, f"t{i}", f"d{i}", 3.0), 0.9) for i in range(1, k + 1)])
        return build_prompt(similar, make_task("P", 9, title, description, None), k)

    def test_count_word_three(self):
        assert self.make(k=3).user.startswith("Below are three similar issues")

    def test_count_word_two(self):
        assert self.make(k=2).user.startswith("Below are two similar issues")

    def test_output_format_instruction_at_end(self):
        assert self.make().user.endswith("DO NOT ELONGATE YOUR ANSWERS.")

    def test_system_prompt_fixed(self):
        prompt = self.make()
        assert prompt.system == SYSTEM_PROMPT
        assert prompt.system.startswith("You are an expert Agile software engineer")

    def test_single_reference_and_new_issue_blocks(self):
        user = self.make().user
        assert user.count("### Reference Issues:") == 1
        assert user.count("### New Issue to Estimate:") == 1
        assert user.count("Estimated Story Point: <number>") == 1

    def test_new_task_fields_verbatim(self):
        user = self.make(title="Weird: a, b; c", description="Multi word description").user
        assert "Title: Weird: a, b; c" in user
        assert "Description: Multi word description" in user

    def test_every_reference_sp_present(self):
        user = self.make(k=4).user
        reference_block = user.split("### New Issue to Estimate:")[0]
        assert reference_block.count("Story Point:") == 4

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            build_prompt("x", make_task("P", 1, "T", "D", None), 0)

    def test_spell_count_fallback(self):
        assert spell_count(4) == "four"
        assert spell_count(23) == "23"


class TestParseStoryPoint:
    def test_exact_format(self):
        parsed = parse_story_point("Estimated Story Point: 5")
        assert parsed.raw_value == 5.0 and parsed.snapped == 5.0 and parsed.parse_status == "direct"

    def test_anchor_found_mid_text(self):
        parsed = parse_story_point("I think it is similar.\nEstimated Story Point: 8\nBecause of scope.")
        assert parsed.raw_value == 8.0 and parsed.parse_status == "direct"

    def test_markdown_emphasis(self):
        assert parse_story_point("**Estimated Story Point: 5**").parse_status == "direct"
        assert parse_story_point("Estimated Story Point: **3**").raw_value == 3.0

    def test_case_insensitive(self):
        assert parse_story_point("estimated story point: 2").parse_status == "direct"

    def test_fallback_first_number(self):
        parsed = parse_story_point("The answer is 3")
        assert parsed.raw_value == 3.0 and parsed.parse_status == "fallback"

    def test_failed_is_a_value(self):
        parsed = parse_story_point("no numbers here")
        assert parsed.parse_status == "failed" and parsed.raw_value is None and parsed.snapped is None

    def test_decimal_value(self):
        assert parse_story_point("Estimated Story Point: 0.5").raw_value == 0.5

    @given(st.integers(0, 99), st.integers(0, 99))
    @settings(max_examples=80)
    def test_round_trip_up_to_two_decimals(self, whole, frac):
        rendered = f"{whole}.{frac:02d}"
        parsed = parse_story_point(f"Estimated Story Point: {rendered}")
        assert parsed.parse_status == "direct"
        assert parsed.raw_value == float(rendered)


class TestSnapToScale:
    def test_member_fixed_point(self):
        assert snap_to_scale(5.0) == 5.0

    def test_tie_prefers_smaller(self):
        assert snap_to_scale(4.0) == 3.0
        assert snap_to_scale(6.5) == 5.0

    def test_negative_clamped(self):
        assert snap_to_scale(-3.0) == 0.0

    def test_absurd_clamped_to_max(self):
        assert snap_to_scale(1000.0) == 89.0

    @given(st.floats(-1000, 1000, allow_nan=False))
    def test_idempotent_and_on_scale(self, value):
        snapped = snap_to_scale(value)
        assert snapped in DEFAULT_SCALE
        assert snap_to_scale(snapped) == snapped

    def test_image_is_whole_scale(self):
        hits = {snap_to_scale(v / 10.0) for v in range(-20, 1200)}
        assert hits == set(DEFAULT_SCALE.allowed_values)


class TestMedianPolicy:
    def test_reference_extraction(self):
        tasks = [(make_task("P", i, f"t{i}", "d", sp), 0.5) for i, sp in enumerate([8.0, 3.0, 1.0], 1)]
        prompt = build_prompt(format_similar_tasks(tasks), make_task("P", 9, "N", "D", None), 3)
        assert reference_story_points(prompt.user) == [8.0, 3.0, 1.0]

    def test_median_odd(self):
        assert median_of_references([8, 3, 1]) == 3

    def test_median_even_takes_lower_middle(self):
        assert median_of_references([5, 5]) == 5
        assert median_of_references([1, 2, 3, 5]) == 2

    def test_stub_generates_median_reply(self):
        tasks = [(make_task("P", i, f"t{i}", "d", sp), 0.5) for i, sp in enumerate([8.0, 3.0, 1.0], 1)]
        prompt = build_prompt(format_similar_tasks(tasks), make_task("P", 9, "N", "D", None), 3)
        reply = MedianStubGenerator().complete(prompt, GenerationConfig())
        assert reply == "Estimated Story Point: 3"


class TestGenerate:
    def test_stub_echo(self):
        backend = ScriptedGenerator(["Estimated Story Point: 5"])
        result = generate(PromptBundle("s", "u"), GenerationConfig(), backend)
        assert result.text == "Estimated Story Point: 5" and result.attempts == 1

    def test_retry_then_success(self):
        backend = ScriptedGenerator([GeneratorTransportError("timeout"), "Estimated Story Point: 2"])
        result = generate(PromptBundle("s", "u"), GenerationConfig(), backend, backoff_seconds=0.0)
        assert result.text.endswith("2") and result.attempts == 2

    def test_three_failures_surface(self):
        backend = ScriptedGenerator([GeneratorTransportError("x")] * 3)
        with pytest.raises(GenerationError, match="after 3 attempts"):
            generate(PromptBundle("s", "u"), GenerationConfig(), backend, backoff_seconds=0.0)

    def test_non_transport_error_not_retried(self):
        backend = ScriptedGenerator([GenerationError("bad status"), "unused"])
        with pytest.raises(GenerationError, match="bad status"):
            generate(PromptBundle("s", "u"), GenerationConfig(), backend, backoff_seconds=0.0)


class TestHttpGeneratorBackend:
    def make_backend(self, handler):
        return HttpGeneratorBackend("http://gen.test/v1/chat/completions", transport=httpx.MockTransport(handler))

    def test_request_shape_and_reply(self):
        seen = {}

        def handler(request):
            import json

            seen.update(json.loads(request.read()))
            return httpx.Response(200, json={"choices": [{"message": {"content": "Estimated Story Point: 5"}}]})

        backend = self.make_backend(handler)
        config = GenerationConfig(model_id="gen-model", temperature=0.2, max_tokens=16, seed=11)
        reply = backend.complete(PromptBundle("sys", "user"), config)
        assert reply == "Estimated Story Point: 5"
        assert seen["model"] == "gen-model" and seen["temperature"] == 0.2 and seen["seed"] == 11
        assert seen["messages"][0] == {"role": "system", "content": "sys"}
        assert seen["messages"][1]["role"] == "user"

    def test_error_status_with_body_excerpt(self):
        backend = self.make_backend(lambda r: httpx.Response(429, text="rate limited"))
        with pytest.raises(GenerationError, match="429.*rate limited"):
            backend.complete(PromptBundle("s", "u"), GenerationConfig())

    def test_transport_error_is_retryable_type(self):
        def handler(request):
            raise httpx.ConnectTimeout("slow")

        with pytest.raises(GeneratorTransportError):
            self.make_backend(handler).complete(PromptBundle("s", "u"), GenerationConfig())


class TestGenerationConfig:
    def test_temperature_range(self):
        with pytest.raises(ValueError):
            GenerationConfig(temperature=2.5)

    def test_max_tokens_positive(self):
        with pytest.raises(ValueError):
            GenerationConfig(max_tokens=0)

    def test_format_sp(self):
        assert format_sp(3.0) == "3" and format_sp(0.5) == "0.5" and format_sp(13.0) == "13"
