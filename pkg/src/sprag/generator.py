"""Prompt construction, chat-completion backends, and numeric-reply parsing.

The system prompt is fixed; the user prompt is parameterized by the
formatted reference issues, the new task's title and description, and the
spelled-out number of references. Replies are parsed by anchoring on
"Estimated Story Point:" first and falling back to the first numeric token,
then snapped onto the story-point scale.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx

from .corpus import DEFAULT_SCALE, ScaleDef, Task

log = logging.getLogger(__name__)

#: Temperatures exercised by the experiment grid.
EXPERIMENT_TEMPERATURES = (0.0, 0.1, 0.2, 0.3)

DEFAULT_GENERATOR_MODEL = "Llama-3.2-3B-Instruct"

SYSTEM_PROMPT = (
    "You are an expert Agile software engineer experienced in story point estimation "
    "using the Scrum methodology. Your goal is to estimate story points for new software "
    "development issues based on similar past issues retrieved from the same project.\n"
    "You should carefully analyze the reference issues and reason based on their complexity, "
    "to provide a consistent numeric estimate. These numeric estimates should be from the "
    "numbers in the fibonacci series (0,1,1,2,3,5,8 and so on) where lower values represent "
    "less complex issue and a higher values represent more complex issue.\n"
    "Respond in a clear and concise format."
)

USER_PROMPT_TEMPLATE = (
    "Below are {count_word} similar issues retrieved from the project's history.\n"
    "The issues are ordered by similarity, with the most similar issue listed first.\n"
    "Use them as references to estimate the story point for the new issue.\n"
    "### Reference Issues:\n"
    "{formatted_similar_tasks}\n"
    "### New Issue to Estimate:\n"
    "Title: {title}\n"
    "Description: {description}\n"
    "### Instructions:\n"
    "1. Compare the new issue with the reference issues.\n"
    "2. Analyze its relative complexity.\n"
    "3. Stay within a reasonable numeric range close to the reference story points. "
    "Do not make large jumps and do not invent new scales - use the fibonacci series "
    "only (0,1,1,2,3,5,8 and so on) and avoid decimal values.\n"
    "4. Finally, give a single numeric story point value that best fits the new issue, "
    "keeping the scale consistent with the reference issues.\n"
    "### Output Format\n"
    "Estimated Story Point: <number>\n"
    "Your answer should ONLY CONTAIN YOUR ESTIMATED STORY POINT. DO NOT ELONGATE YOUR ANSWERS."
)

_COUNT_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten")


class GenerationError(RuntimeError):
    """The generator returned a non-success status or exhausted its retries."""


class GeneratorTransportError(GenerationError):
    """A transport-level failure that is worth retrying."""


@dataclass(frozen=True)
class PromptBundle:
    system: str
    user: str


@dataclass(frozen=True)
class GenerationConfig:
    model_id: str = DEFAULT_GENERATOR_MODEL
    temperature: float = 0.0
    max_tokens: int = 16
    seed: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class ParsedEstimate:
    raw_value: float | None
    snapped: float | None
    parse_status: str  # direct | fallback | failed


@dataclass(frozen=True)
class GenerationResult:
    text: str
    attempts: int


def format_sp(value: float) -> str:
    """Render a story point the way the cards read: "3", not "3.0"."""
    return str(int(value)) if float(value).is_integer() else f"{value:g}"


def format_similar_tasks(items: Sequence[tuple[Task, float]]) -> str:
    """Numbered reference-issue block, most similar first."""
    if not items:
        raise ValueError("no similar tasks to format")
    blocks = []
    for i, (task, _similarity) in enumerate(items, start=1):
        sp = "?" if task.story_point is None else format_sp(task.story_point)
        blocks.append(
            f"{i}. Task Title\n{task.title}\nTask Description\n{task.description}\nStory Point: {sp}"
        )
    return "\n".join(blocks)


def spell_count(k: int) -> str:
    return _COUNT_WORDS[k] if 0 <= k < len(_COUNT_WORDS) else str(k)


def build_prompt(similar: str, new_task: Task, k: int) -> PromptBundle:
    """Fill the user template; the count word reflects the actual k in use."""
    if k < 1:
        raise ValueError("k must be at least 1")
    user = USER_PROMPT_TEMPLATE.format(
        count_word=spell_count(k),
        formatted_similar_tasks=similar,
        title=new_task.title,
        description=new_task.description,
    )
    return PromptBundle(system=SYSTEM_PROMPT, user=user)


_NUMBER = r"(-?\d+(?:\.\d+)?)"
_DIRECT_RE = re.compile(
    r"estimated[\s*_`~]+story[\s*_`~]+points?[\s*_`~]*:[\s*_`~]*" + _NUMBER,
    re.IGNORECASE,
)
_ANY_NUMBER_RE = re.compile(_NUMBER)


def parse_story_point(raw: str, scale: ScaleDef = DEFAULT_SCALE) -> ParsedEstimate:
    """Two-pass numeric extraction: anchored first, then any numeric token.

    A failed parse is a value, not an exception; the caller decides the
    fallback policy.
    """
    match = _DIRECT_RE.search(raw)
    if match:
        value = float(match.group(1))
        return ParsedEstimate(raw_value=value, snapped=snap_to_scale(value, scale), parse_status="direct")
    match = _ANY_NUMBER_RE.search(raw)
    if match:
        value = float(match.group(1))
        return ParsedEstimate(raw_value=value, snapped=snap_to_scale(value, scale), parse_status="fallback")
    return ParsedEstimate(raw_value=None, snapped=None, parse_status="failed")


def snap_to_scale(value: float, scale: ScaleDef = DEFAULT_SCALE) -> float:
    """Nearest allowed value by absolute distance; exact ties take the smaller.

    Out-of-range values are clamped to the scale endpoints first.
    """
    lo, hi = scale.allowed_values[0], scale.allowed_values[-1]
    value = min(max(value, lo), hi)
    return min(scale.allowed_values, key=lambda s: (abs(value - s), s))


class GeneratorBackend(Protocol):
    def complete(self, prompt: PromptBundle, config: GenerationConfig) -> str: ...


class HttpGeneratorBackend:
    """POSTs a chat-completion request and reads choices[0].message.content."""

    def __init__(
        self,
        url: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ):
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self.url = url

    def complete(self, prompt: PromptBundle, config: GenerationConfig) -> str:
        body = {
            "model": config.model_id,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        }
        if config.seed is not None:
            body["seed"] = config.seed
        try:
            response = self._client.post(self.url, json=body)
        except httpx.HTTPError as exc:
            raise GeneratorTransportError(f"generation request failed: {exc}") from exc
        if response.status_code != 200:
            raise GenerationError(f"generator returned {response.status_code}: {response.text[:200]}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GenerationError(f"malformed generator response: {exc}") from exc


_REFERENCE_SP_RE = re.compile(r"Story Point:\s*(-?\d+(?:\.\d+)?)")


def reference_story_points(user_prompt: str) -> list[float]:
    """Story points quoted in the reference block of a user prompt."""
    return [float(m) for m in _REFERENCE_SP_RE.findall(user_prompt)]


def median_of_references(sps: Sequence[float]) -> float:
    """Median; an even count takes the lower middle so the result stays on-scale."""
    if not sps:
        raise ValueError("no reference story points")
    ordered = sorted(sps)
    return ordered[(len(ordered) - 1) // 2]


class MedianStubGenerator:
    """Offline stand-in: answers with the median of the reference story points."""

    def complete(self, prompt: PromptBundle, config: GenerationConfig) -> str:
        sps = reference_story_points(prompt.user)
        if not sps:
            return "Estimated Story Point:"
        return f"Estimated Story Point: {format_sp(median_of_references(sps))}"


class ScriptedGenerator:
    """Replays a fixed list of replies; raises queued exceptions in place."""

    def __init__(self, replies: Sequence[str | Exception]):
        self._replies = list(replies)
        self.calls = 0

    def complete(self, prompt: PromptBundle, config: GenerationConfig) -> str:
        if not self._replies:
            raise GenerationError("scripted generator ran out of replies")
        self.calls += 1
        reply = self._replies.pop(0)
        if isinstance(reply, Exception):
            raise reply
        return reply


def generate(
    prompt: PromptBundle,
    config: GenerationConfig,
    backend: GeneratorBackend,
    max_attempts: int = 3,
    backoff_seconds: float = 0.5,
) -> GenerationResult:
    """Call the backend, retrying transport failures with exponential backoff."""
    last_error: Exception | None = None
    for attempt in range(1, max_attempts + 1):
        try:
            text = backend.complete(prompt, config)
            log.debug(
                "generation ok model=%s temperature=%s attempt=%d reply=%r",
                config.model_id, config.temperature, attempt, text[:80],
            )
            return GenerationResult(text=text, attempts=attempt)
        except GeneratorTransportError as exc:
            last_error = exc
            log.warning("generation attempt %d/%d failed: %s", attempt, max_attempts, exc)
            if attempt < max_attempts:
                time.sleep(backoff_seconds * 2 ** (attempt - 1))
    raise GenerationError(f"generation failed after {max_attempts} attempts: {last_error}")
