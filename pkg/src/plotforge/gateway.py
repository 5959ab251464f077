"""Pluggable chat-completion backend.

Three kinds speak one interface (``complete(dialogue) -> CompletionResult``):

* ``http`` -- an OpenAI-style chat-completions endpoint, with retry/backoff
  and an injectable transport so tests can stub the wire.
* ``replay`` -- answers only from a previously populated response cache, so a
  whole evaluation re-runs byte-identically with zero network.
* ``scripted`` -- a deterministic table mapping dialogue digests to canned
  replies, for protocol tests.

Any backend may additionally be wrapped in the cache (``cache_dir``): on a
miss the inner backend is consulted and the reply stored atomically; on a hit
the stored text is returned with ``from_cache=True``.

Credentials/endpoint come from ``MODEL_API_KEY`` / ``MODEL_BASE_URL`` unless
the config provides them.
"""

from __future__ import annotations

import base64
import json
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    BackendUnavailableError,
    ReplayMissError,
    ScriptMissError,
    UsageError,
)
from .tasks import atomic_write_text, json_digest

ROLES = ("system", "user", "assistant")

BACKOFF_BASE_S = 1.0
BACKOFF_CAP_S = 30.0


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str
    image_paths: tuple[str, ...] = ()

    def __post_init__(self):
        if self.role not in ROLES:
            raise UsageError(f"unknown chat role {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise UsageError(f"{self.role} message content must be nonempty")


@dataclass(frozen=True)
class ChatDialogue:
    messages: tuple[ChatMessage, ...]

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))

    def validate_for_completion(self) -> None:
        """Leading system message optional, then strict user/assistant
        alternation, ending on a user turn."""
        msgs = list(self.messages)
        if msgs and msgs[0].role == "system":
            msgs = msgs[1:]
        if not msgs:
            raise UsageError("dialogue has no user turn to complete")
        expected = "user"
        for msg in msgs:
            if msg.role == "system":
                raise UsageError("system message only allowed at the start")
            if msg.role != expected:
                raise UsageError(
                    f"roles must alternate user/assistant; got {msg.role!r}, "
                    f"expected {expected!r}"
                )
            expected = "assistant" if expected == "user" else "user"
        if msgs[-1].role != "user":
            raise UsageError("dialogue must end with a user message for completion")


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # "http" | "replay" | "scripted"
    model_name: str = "default"
    endpoint: str | None = None
    temperature: float = 0.0
    max_tokens: int = 4096
    max_retries: int = 2
    cache_dir: str | None = None
    script_path: str | None = None
    script_table: dict | None = None
    supports_images: bool = False
    request_timeout_s: float = 120.0

    def __post_init__(self):
        if self.kind not in ("http", "replay", "scripted"):
            raise UsageError(f"unknown backend kind {self.kind!r}")
        if self.temperature < 0:
            raise UsageError("temperature must be >= 0")
        if self.max_retries < 0:
            raise UsageError("max_retries must be >= 0")
        if self.kind == "scripted" and self.script_table is None and not self.script_path:
            raise UsageError("scripted backend needs a script table")
        if self.kind == "replay" and not self.cache_dir:
            raise UsageError("replay backend needs a cache_dir")


@dataclass(frozen=True)
class CompletionResult:
    text: str
    from_cache: bool = False
    latency_ms: int = 0


def _effective_messages(dialogue: ChatDialogue, config: BackendConfig) -> list[dict]:
    """Wire-shape messages; image attachments dropped unless supported."""
    messages = []
    for msg in dialogue.messages:
        entry: dict = {"role": msg.role, "content": msg.content}
        if msg.image_paths and config.supports_images:
            entry["images"] = list(msg.image_paths)
        messages.append(entry)
    return messages


def cache_key(dialogue: ChatDialogue, config: BackendConfig) -> str:
    """Digest of what determines a completion.

    Sensitive to message order, roles, content (and attachments, when
    forwarded), model name and decoding parameters; insensitive to transport
    details (kind, endpoint, retries, cache location), so a cache populated
    over http replays under the replay backend.
    """
    return json_digest(
        {
            "messages": _effective_messages(dialogue, config),
            "model_name": config.model_name,
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
        }
    )


def backend_digest(config: BackendConfig) -> str:
    """Semantic identity of a backend for run manifests: changing the model,
    decoding parameters or the script content counts as drift; swapping
    http for replay of the same model does not."""
    script = None
    if config.kind == "scripted":
        script = json_digest(_load_script_table(config))
    return json_digest(
        {
            "model_name": config.model_name,
            "temperature": config.temperature,
            "max_tokens": config.max_tokens,
            "script": script,
        }
    )


def _load_script_table(config: BackendConfig) -> dict:
    if config.script_table is not None:
        return dict(config.script_table)
    with open(config.script_path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return raw.get("responses", raw)


class ScriptedBackend:
    """Deterministic test double: dialogue digest -> canned reply."""

    def __init__(self, config: BackendConfig):
        self.config = config
        self.table = _load_script_table(config)

    def complete(self, dialogue: ChatDialogue) -> CompletionResult:
        dialogue.validate_for_completion()
        key = cache_key(dialogue, self.config)
        if key not in self.table:
            tail = dialogue.messages[-1].content[:120]
            raise ScriptMissError(
                f"no scripted reply for digest {key[:12]}... (last user turn: {tail!r})"
            )
        return CompletionResult(text=self.table[key], from_cache=False)


class ReplayBackend:
    """Cache-only backend: every completion must already be on disk."""

    def __init__(self, config: BackendConfig):
        self.config = config
        self.cache_dir = Path(config.cache_dir)

    def complete(self, dialogue: ChatDialogue) -> CompletionResult:
        dialogue.validate_for_completion()
        key = cache_key(dialogue, self.config)
        path = self.cache_dir / f"{key}.json"
        if not path.is_file():
            raise ReplayMissError(f"no cached response for digest {key[:12]}...")
        entry = json.loads(path.read_text(encoding="utf-8"))
        return CompletionResult(text=entry["response"], from_cache=True)


def _default_transport(url: str, headers: dict, body: dict, timeout_s: float):
    import requests

    resp = requests.post(url, headers=headers, json=body, timeout=timeout_s)
    try:
        payload = resp.json()
    except ValueError:
        payload = {"raw": resp.text}
    return resp.status_code, payload


def _image_part(path: str) -> dict:
    data = Path(path).read_bytes()
    suffix = Path(path).suffix.lstrip(".").lower() or "png"
    encoded = base64.b64encode(data).decode("ascii")
    return {
        "type": "image_url",
        "image_url": {"url": f"data:image/{suffix};base64,{encoded}"},
    }


class HttpBackend:
    """OpenAI-style chat-completions client with retry and jittered backoff."""

    def __init__(self, config: BackendConfig, transport=None, sleeper=time.sleep, rng=None):
        self.config = config
        self.transport = transport or _default_transport
        self.sleeper = sleeper
        self.rng = rng or random.Random()
        self._semaphore: threading.Semaphore | None = None
        endpoint = config.endpoint or os.environ.get("MODEL_BASE_URL")
        if not endpoint:
            raise UsageError("http backend needs an endpoint (config or MODEL_BASE_URL)")
        if endpoint.rstrip("/").endswith("/chat/completions"):
            self.url = endpoint.rstrip("/")
        else:
            self.url = endpoint.rstrip("/") + "/chat/completions"

    def limit_inflight(self, width: int) -> None:
        self._semaphore = threading.Semaphore(width)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get("MODEL_API_KEY")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _body(self, dialogue: ChatDialogue) -> dict:
        messages = []
        for msg in dialogue.messages:
            if msg.image_paths and self.config.supports_images:
                content = [{"type": "text", "text": msg.content}]
                content.extend(_image_part(p) for p in msg.image_paths)
                messages.append({"role": msg.role, "content": content})
            else:
                messages.append({"role": msg.role, "content": msg.content})
        return {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }

    def complete(self, dialogue: ChatDialogue) -> CompletionResult:
        dialogue.validate_for_completion()
        body = self._body(dialogue)
        attempts = self.config.max_retries + 1
        last_error: str = "no attempt made"
        start = time.monotonic()
        for attempt in range(attempts):
            if attempt:
                delay = min(BACKOFF_CAP_S, BACKOFF_BASE_S * (2 ** (attempt - 1)))
                self.sleeper(delay * self.rng.uniform(0.5, 1.0))
            try:
                if self._semaphore:
                    with self._semaphore:
                        status, payload = self.transport(
                            self.url, self._headers(), body, self.config.request_timeout_s
                        )
                else:
                    status, payload = self.transport(
                        self.url, self._headers(), body, self.config.request_timeout_s
                    )
            except Exception as exc:
                last_error = f"transport failure: {exc}"
                continue
            if status == 200:
                try:
                    text = payload["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError):
                    last_error = f"unexpected response shape: {str(payload)[:200]}"
                    continue
                latency_ms = int((time.monotonic() - start) * 1000)
                return CompletionResult(text=text, from_cache=False, latency_ms=latency_ms)
            last_error = f"HTTP {status}: {str(payload)[:200]}"
            if 400 <= status < 500 and status != 429:
                break  # config problem; retrying cannot help
        raise BackendUnavailableError(f"backend unavailable after {attempts} attempt(s): {last_error}")


class CachingBackend:
    """Wraps any backend with the on-disk response cache."""

    def __init__(self, inner, config: BackendConfig):
        self.inner = inner
        self.config = config
        self.cache_dir = Path(config.cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def complete(self, dialogue: ChatDialogue) -> CompletionResult:
        key = cache_key(dialogue, self.config)
        path = self.cache_dir / f"{key}.json"
        if path.is_file():
            entry = json.loads(path.read_text(encoding="utf-8"))
            return CompletionResult(text=entry["response"], from_cache=True)
        result = self.inner.complete(dialogue)
        entry = {
            "request": {
                "messages": _effective_messages(dialogue, self.config),
                "model_name": self.config.model_name,
                "temperature": self.config.temperature,
                "max_tokens": self.config.max_tokens,
            },
            "response": result.text,
        }
        atomic_write_text(path, json.dumps(entry, ensure_ascii=False, indent=2) + "\n")
        return result


def make_backend(config: BackendConfig, transport=None, sleeper=time.sleep, rng=None):
    """Build the backend a config describes, cache wrapper included."""
    if config.kind == "scripted":
        backend = ScriptedBackend(config)
    elif config.kind == "replay":
        return ReplayBackend(config)
    elif config.kind == "http":
        backend = HttpBackend(config, transport=transport, sleeper=sleeper, rng=rng)
    else:  # pragma: no cover - BackendConfig already validates
        raise UsageError(f"unknown backend kind {config.kind!r}")
    if config.cache_dir:
        return CachingBackend(backend, config)
    return backend


def complete(dialogue: ChatDialogue, config: BackendConfig, transport=None) -> CompletionResult:
    """One-shot completion through a freshly built backend."""
    return make_backend(config, transport=transport).complete(dialogue)


def parse_backend_spec(spec: str) -> BackendConfig:
    """CLI shorthand: ``scripted:table.json``, ``replay:cachedir``,
    ``http:https://host/v1`` (or bare ``http`` to use MODEL_BASE_URL)."""
    kind, _, arg = spec.partition(":")
    if kind == "scripted":
        if not arg:
            raise UsageError("scripted backend spec needs a table path: scripted:<file>")
        return BackendConfig(kind="scripted", script_path=arg)
    if kind == "replay":
        if not arg:
            raise UsageError("replay backend spec needs a cache dir: replay:<dir>")
        return BackendConfig(kind="replay", cache_dir=arg)
    if kind == "http":
        return BackendConfig(kind="http", endpoint=arg or None)
    raise UsageError(f"unknown backend spec {spec!r} (want http|replay|scripted)")
