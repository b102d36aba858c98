"""Chat-model access for the synthesis stages.

Every stage call goes through a provider with one method,
``complete(ChatRequest) -> ChatReply``.  Two providers ship:

* :class:`LiveProvider` talks to an OpenAI-compatible endpoint with
  retries, reading credentials from ``ARCFORGE_API_KEY`` /
  ``ARCFORGE_API_BASE``.
* :class:`ReplayProvider` answers from recorded fixture files keyed by
  a digest of the full request, so pipeline runs are reproducible
  offline byte for byte.  A miss is an error that names the digest, not
  a silent fallback.

Model replies are prose wrapped around JSON more often than clean
JSON, so :func:`extract_json` brace-scans the text (string-aware) and
:func:`extract_named` additionally demands the field set of a named
reply shape.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import pathlib
import time
from collections.abc import Callable
from dataclasses import dataclass

import requests

STAGE_NAMES = ("step1", "step2", "step3", "step3_1", "step3_2", "judge", "classifier")

RETRYABLE_STATUS = (429, 500, 502, 503, 504)


class GatewayError(Exception):
    """A provider could not produce a reply."""


class ReplayMiss(GatewayError):
    """No recorded reply exists for this request digest."""


class ExtractionError(Exception):
    """No usable JSON object could be pulled out of a reply."""


@dataclass(frozen=True)
class StageConfig:
    """Sampling settings for one stage; ``temperature=None`` is never sent."""

    model_id: str
    max_tokens: int = 2048
    top_p: float = 1.0
    temperature: float | None = None


DEFAULT_STAGE_CONFIGS: dict[str, StageConfig] = {
    "step1": StageConfig(model_id="gpt-o1"),
    "step2": StageConfig(model_id="gpt-o3-mini"),
    "step3": StageConfig(model_id="gpt-o3-mini"),
    "step3_1": StageConfig(model_id="gpt-4.1", temperature=0.2),
    "step3_2": StageConfig(model_id="gpt-4.1", temperature=0.2),
    "judge": StageConfig(model_id="gpt-o3-mini", max_tokens=40000),
    "classifier": StageConfig(model_id="gpt-4o"),
}


@dataclass(frozen=True)
class Attachment:
    """An inline image (a sampled animation frame, typically)."""

    media_type: str
    data: bytes

    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()

    def as_data_url(self) -> str:
        encoded = base64.b64encode(self.data).decode("ascii")
        return f"data:{self.media_type};base64,{encoded}"


@dataclass(frozen=True)
class ChatRequest:
    stage: str
    system: str
    user: str
    attachments: tuple[Attachment, ...] = ()

    def __post_init__(self) -> None:
        if self.stage not in STAGE_NAMES:
            raise ValueError(f"unknown stage {self.stage!r}; expected one of {STAGE_NAMES}")


@dataclass(frozen=True)
class ChatReply:
    text: str
    model_id: str


def request_digest(request: ChatRequest) -> str:
    """Stable identity of a request: stage, both prompts, attachment bytes."""
    doc = {
        "stage": request.stage,
        "system": request.system,
        "user": request.user,
        "attachments": [a.digest() for a in request.attachments],
    }
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def stage_config(configs: dict[str, StageConfig], stage: str) -> StageConfig:
    try:
        return configs[stage]
    except KeyError:
        raise GatewayError(f"no model configured for stage {stage!r}") from None


class ReplayProvider:
    """Answers from ``{digest}.json`` files under a fixture directory."""

    def __init__(
        self,
        fixture_dir: str | pathlib.Path,
        configs: dict[str, StageConfig] | None = None,
    ) -> None:
        self.fixture_dir = pathlib.Path(fixture_dir)
        self.configs = dict(configs or DEFAULT_STAGE_CONFIGS)

    def _path(self, digest: str) -> pathlib.Path:
        return self.fixture_dir / f"{digest}.json"

    def complete(self, request: ChatRequest) -> ChatReply:
        config = stage_config(self.configs, request.stage)
        digest = request_digest(request)
        path = self._path(digest)
        if not path.exists():
            raise ReplayMiss(
                f"no recorded reply for digest {digest} (stage {request.stage!r}); "
                f"looked in {self.fixture_dir}"
            )
        doc = json.loads(path.read_text(encoding="utf-8"))
        return ChatReply(text=doc["text"], model_id=doc.get("model_id", config.model_id))

    def record(self, request: ChatRequest, text: str, model_id: str | None = None) -> str:
        """Store a reply for this request; returns the digest used."""
        config = stage_config(self.configs, request.stage)
        digest = request_digest(request)
        self.fixture_dir.mkdir(parents=True, exist_ok=True)
        doc = {
            "stage": request.stage,
            "model_id": model_id or config.model_id,
            "text": text,
        }
        self._path(digest).write_text(
            json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        return digest


class LiveProvider:
    """OpenAI-compatible chat-completions client with bounded retries."""

    def __init__(
        self,
        api_key: str,
        base_url: str = "https://api.openai.com/v1",
        configs: dict[str, StageConfig] | None = None,
        retries: int = 2,
        backoff_s: float = 1.0,
        timeout_s: float = 120.0,
        post: Callable = requests.post,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if not api_key:
            raise GatewayError("an API key is required for live calls")
        self.api_key = api_key
        self.base_url = base_url.rstrip("/")
        self.configs = dict(configs or DEFAULT_STAGE_CONFIGS)
        self.retries = retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self._post = post
        self._sleep = sleep

    @classmethod
    def from_env(cls, configs: dict[str, StageConfig] | None = None, **kwargs) -> "LiveProvider":
        api_key = os.environ.get("ARCFORGE_API_KEY", "")
        if not api_key:
            raise GatewayError("ARCFORGE_API_KEY is not set")
        base_url = os.environ.get("ARCFORGE_API_BASE", "https://api.openai.com/v1")
        return cls(api_key=api_key, base_url=base_url, configs=configs, **kwargs)

    def _payload(self, request: ChatRequest, config: StageConfig) -> dict:
        if request.attachments:
            content: object = [{"type": "text", "text": request.user}] + [
                {"type": "image_url", "image_url": {"url": a.as_data_url()}}
                for a in request.attachments
            ]
        else:
            content = request.user
        payload = {
            "model": config.model_id,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": content},
            ],
            "max_tokens": config.max_tokens,
            "top_p": config.top_p,
        }
        if config.temperature is not None:
            payload["temperature"] = config.temperature
        return payload

    def complete(self, request: ChatRequest) -> ChatReply:
        config = stage_config(self.configs, request.stage)
        payload = self._payload(request, config)
        url = f"{self.base_url}/chat/completions"
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_error = "no attempt made"
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                response = self._post(url, json=payload, headers=headers, timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code in RETRYABLE_STATUS:
                last_error = f"status {response.status_code}: {response.text[:200]}"
                continue
            if response.status_code != 200:
                raise GatewayError(
                    f"stage {request.stage!r} call failed with status "
                    f"{response.status_code}: {response.text[:200]}"
                )
            try:
                text = response.json()["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                raise GatewayError(f"unusable completion payload: {exc}") from None
            if not isinstance(text, str):
                raise GatewayError("completion content is not text")
            return ChatReply(text=text, model_id=config.model_id)
        raise GatewayError(
            f"stage {request.stage!r} call failed after {self.retries + 1} attempts; "
            f"last error: {last_error}"
        )


class RecordingProvider:
    """Pass-through provider that saves every reply as a replay fixture."""

    def __init__(self, inner, fixture_dir: str | pathlib.Path) -> None:
        self.inner = inner
        self.replay = ReplayProvider(fixture_dir)

    def complete(self, request: ChatRequest) -> ChatReply:
        reply = self.inner.complete(request)
        self.replay.record(request, reply.text, model_id=reply.model_id)
        return reply


# ---------------------------------------------------------------------------
# pulling JSON out of model prose
# ---------------------------------------------------------------------------


def _balanced_objects(text: str):
    """Yield the balanced ``{...}`` substring opened at every brace.

    Outer objects come before the objects nested inside them, so a
    consumer preferring the outermost match just takes the first hit.
    """
    length = len(text)
    index = 0
    while index < length:
        start = text.find("{", index)
        if start < 0:
            return
        depth = 0
        in_string = False
        escaped = False
        for position in range(start, length):
            char = text[position]
            if in_string:
                if escaped:
                    escaped = False
                elif char == "\\":
                    escaped = True
                elif char == '"':
                    in_string = False
            elif char == '"':
                in_string = True
            elif char == "{":
                depth += 1
            elif char == "}":
                depth -= 1
                if depth == 0:
                    yield text[start : position + 1]
                    break
        index = start + 1  # also visit objects nested inside this one


def extract_json(text: str) -> dict:
    """First parseable JSON object in ``text``, fences and prose ignored."""
    for candidate in _balanced_objects(text):
        try:
            doc = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict):
            return doc
    raise ExtractionError("no JSON object found in the reply")


#: Required top-level fields per named reply shape.
REPLY_SHAPES: dict[str, tuple[str, ...]] = {
    "abstraction": (
        "scenario",
        "visual_elements",
        "objects",
        "static_patterns",
        "dynamic_patterns",
        "core_principles",
        "interactions",
    ),
    "sketch": ("concepts", "description"),
    "program_v1": ("library", "main_code", "generate_input_code", "total_code"),
    "bitmap_seed": (
        "bitmap",
        "pixel_meaning",
        "parameter_desc",
        "function_code",
        "sample_execute_code",
    ),
    "program_v2": ("input_bitmap_generation_code", "used_concept", "solution_code"),
}


def extract_named(text: str, shape: str) -> dict:
    """First JSON object in ``text`` that carries every field of ``shape``."""
    try:
        required = REPLY_SHAPES[shape]
    except KeyError:
        raise ValueError(f"unknown reply shape {shape!r}") from None
    best_missing: tuple[dict, list[str]] | None = None
    found_any = False
    for candidate in _balanced_objects(text):
        try:
            doc = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if not isinstance(doc, dict):
            continue
        found_any = True
        missing = [field for field in required if field not in doc]
        if not missing:
            return doc
        if best_missing is None or len(missing) < len(best_missing[1]):
            best_missing = (doc, missing)
    if best_missing is not None:
        missing = ", ".join(best_missing[1])
        raise ExtractionError(f"reply JSON is missing required fields: {missing}")
    if found_any:
        raise ExtractionError("reply contained JSON, but nothing object-shaped")
    raise ExtractionError("no JSON object found in the reply")
