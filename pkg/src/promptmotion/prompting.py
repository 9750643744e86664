"""Prompt construction, LLM description generation, and on-disk caching.

An action phrase ("walk", "act like a dog") is expanded into an engineered
prompt that asks a completion model for detailed body-movement text. The
module talks to a pluggable client: a live HTTP backend for real runs, or a
seeded stub that produces deterministic procedural descriptions so the rest
of the pipeline is fully testable offline. Generated description sets are
cached on disk keyed by (normalized phrase, prompt version, sampling config).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import (
    CacheCorrupt,
    ClientUnavailable,
    ConfigError,
    EmptyCompletion,
    EmptyPhrase,
    UnknownPromptVersion,
    ValidationError,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActionPhrase:
    """A short action label; a nonempty sequence of whitespace-separated words."""

    text: str

    def __post_init__(self):
        stripped = self.text.strip() if isinstance(self.text, str) else ""
        if not stripped:
            raise EmptyPhrase("action phrase must contain at least one word")
        object.__setattr__(self, "text", stripped)

    @property
    def word_count(self) -> int:
        return len(self.text.split())


@dataclass(frozen=True)
class PromptText:
    """A rendered prompt plus the registry version and source phrase it came from."""

    text: str
    prompt_version: str
    phrase: ActionPhrase


@dataclass(frozen=True)
class LlmConfig:
    """Sampling configuration for the completion backend.

    Defaults follow the reference setup: temperature 0.5, top-p 1,
    a 140-token completion budget, and k=4 descriptions per phrase.
    """

    model_name: str = "davinci-002"
    temperature: float = 0.5
    top_p: float = 1.0
    max_tokens: int = 140
    k: int = 4

    def __post_init__(self):
        if not (0.0 <= self.temperature <= 2.0):
            raise ConfigError(f"temperature must be in [0, 2], got {self.temperature}")
        if not (0.0 < self.top_p <= 1.0):
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if not (1 <= int(self.max_tokens) <= 4096):
            raise ConfigError(f"max_tokens must be in [1, 4096], got {self.max_tokens}")
        if int(self.k) < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class DescriptionSet:
    """k generated body-movement descriptions for one phrase."""

    phrase: ActionPhrase
    descriptions: tuple[str, ...]
    config: LlmConfig
    prompt_version: str

    def __post_init__(self):
        object.__setattr__(self, "descriptions", tuple(self.descriptions))
        if len(self.descriptions) != self.config.k:
            raise ValidationError(
                f"expected {self.config.k} descriptions, got {len(self.descriptions)}"
            )
        if any(not d.strip() for d in self.descriptions):
            raise ValidationError("descriptions must be nonempty")


# ---------------------------------------------------------------------------
# Prompt registry
# ---------------------------------------------------------------------------

# The four registered versions mirror the prompt-component comparison rows:
# the raw phrase, the person framing, the body-movements framing, and the
# full template with the trailing detail request.
_PROMPT_TEMPLATES: dict[str, str] = {
    "bare": "{phrase}",
    "person": "Describe a person who is performing the action {phrase}",
    "no-detail": "Describe a person's body movements who is performing the action {phrase}",
    "v1": "Describe a person's body movements who is performing the action {phrase} in detail",
}


def register_prompt_version(name: str, template: str) -> None:
    """Add a prompt template; it must contain the ``{phrase}`` slot exactly once."""
    if template.count("{phrase}") != 1:
        raise ConfigError("prompt template must contain '{phrase}' exactly once")
    _PROMPT_TEMPLATES[name] = template


def registered_prompt_versions() -> tuple[str, ...]:
    return tuple(_PROMPT_TEMPLATES)


def build_prompt(phrase: ActionPhrase | str, prompt_version: str = "v1") -> PromptText:
    """Render the registered template for ``prompt_version`` around the phrase.

    Pure string substitution; no client involved.
    """
    if not isinstance(phrase, ActionPhrase):
        phrase = ActionPhrase(phrase)
    try:
        template = _PROMPT_TEMPLATES[prompt_version]
    except KeyError:
        raise UnknownPromptVersion(
            f"unknown prompt version {prompt_version!r}; "
            f"registered: {sorted(_PROMPT_TEMPLATES)}"
        ) from None
    return PromptText(
        text=template.format(phrase=phrase.text),
        prompt_version=prompt_version,
        phrase=phrase,
    )


# ---------------------------------------------------------------------------
# Clients
# ---------------------------------------------------------------------------

class LlmClient(Protocol):
    """One completion per call; ``index`` identifies the sample slot in [0, k)."""

    def complete(self, prompt: str, config: LlmConfig, index: int) -> str:
        ...


def count_tokens(text: str) -> int:
    """Whitespace token count; the budget proxy used for offline clients."""
    return len(text.split())


_BODY_PARTS = ("arms", "legs", "torso", "head", "hands", "feet")
_VERBS = ("lifts", "bends", "swings", "rotates", "extends", "lowers", "stretches")
_QUALIFIERS = ("slowly", "quickly", "smoothly", "steadily", "gently")
_DIRECTIONS = ("forward", "backward", "to the left", "to the right")


class StubLlmClient:
    """Deterministic offline stand-in for the completion backend.

    Each completion is a procedural paragraph naming at least two body parts
    from a fixed lexicon, fully determined by (seed, prompt, index). The
    closing sentence embeds the sample index, so the k completions for one
    prompt are pairwise distinct.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def _rng(self, prompt: str, index: int) -> np.random.Generator:
        digest = hashlib.sha256(f"{self.seed}|{index}|{prompt}".encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    def complete(self, prompt: str, config: LlmConfig, index: int) -> str:
        rng = self._rng(prompt, index)
        part_a, part_b = rng.choice(_BODY_PARTS, size=2, replace=False)
        part_c = rng.choice(_BODY_PARTS)
        verb_a, verb_b, verb_c = rng.choice(_VERBS, size=3, replace=True)
        qual = rng.choice(_QUALIFIERS)
        direction = rng.choice(_DIRECTIONS)
        sentences = [
            f"The person {verb_a} the {part_a} {qual} and {verb_b} the {part_b} with control.",
            f"The {part_c} {verb_c} while the weight shifts {direction} and the balance is kept.",
            f"The movement is repeated {index + 2} times before returning to a resting stance.",
        ]
        words = " ".join(sentences).split()
        return " ".join(words[: config.max_tokens])


class LiveLlmClient:
    """HTTP client for an OpenAI-style text completions endpoint.

    Credentials come from an environment variable whose name is configurable;
    any transport, auth, or payload failure surfaces as ClientUnavailable.
    """

    def __init__(
        self,
        endpoint: str = "https://api.openai.com/v1/completions",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        session=None,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def complete(self, prompt: str, config: LlmConfig, index: int) -> str:
        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise ClientUnavailable(
                f"environment variable {self.api_key_env!r} is not set"
            )
        payload = {
            "model": config.model_name,
            "prompt": prompt,
            "temperature": config.temperature,
            "top_p": config.top_p,
            "max_tokens": config.max_tokens,
        }
        try:
            response = self._session.post(
                self.endpoint,
                json=payload,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
            response.raise_for_status()
            body = response.json()
            return body["choices"][0]["text"]
        except ClientUnavailable:
            raise
        except (KeyError, IndexError, TypeError) as exc:
            raise ClientUnavailable(f"malformed completion response: {exc!r}") from exc
        except Exception as exc:  # requests transport / HTTP errors
            raise ClientUnavailable(str(exc)) from exc


def generate_descriptions(
    prompt: PromptText, config: LlmConfig, client: LlmClient
) -> DescriptionSet:
    """Fetch exactly k completions as independent requests.

    A whitespace-only completion is retried once for its slot; a second
    empty answer raises EmptyCompletion.
    """
    descriptions = []
    for index in range(config.k):
        text = client.complete(prompt.text, config, index).strip()
        if not text:
            text = client.complete(prompt.text, config, index).strip()
        if not text:
            raise EmptyCompletion(
                f"completion {index} for prompt {prompt.text!r} was empty after one retry"
            )
        descriptions.append(text)
    return DescriptionSet(
        phrase=prompt.phrase,
        descriptions=tuple(descriptions),
        config=config,
        prompt_version=prompt.prompt_version,
    )


# ---------------------------------------------------------------------------
# Disk cache
# ---------------------------------------------------------------------------

def normalize_phrase(text: str) -> str:
    """Cache normalization: trim plus lowercase."""
    return text.strip().lower()


class DescriptionCache:
    """Content-addressed store: ``<root>/<sha256(key)>.json``, one record per key.

    Writes go through a temp file and ``os.replace`` so concurrent misses on
    the same key converge to one valid record.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(phrase: ActionPhrase | str, prompt_version: str, config: LlmConfig) -> str:
        text = phrase.text if isinstance(phrase, ActionPhrase) else phrase
        parts = [
            normalize_phrase(text),
            prompt_version,
            config.model_name,
            repr(float(config.temperature)),
            repr(float(config.top_p)),
            str(config.max_tokens),
            str(config.k),
        ]
        return hashlib.sha256("\x1f".join(parts).encode()).hexdigest()

    def path_for(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(
        self, phrase: ActionPhrase | str, prompt_version: str, config: LlmConfig
    ) -> DescriptionSet | None:
        path = self.path_for(self.key(phrase, prompt_version, config))
        if not path.exists():
            return None
        try:
            record = json.loads(path.read_text())
            return self._decode(record)
        except (CacheCorrupt, json.JSONDecodeError, OSError) as exc:
            logger.warning("corrupt cache record %s (%s); treating as miss", path, exc)
            return None

    def put(self, dset: DescriptionSet) -> Path:
        key = self.key(dset.phrase, dset.prompt_version, dset.config)
        path = self.path_for(key)
        record = {
            "phrase": normalize_phrase(dset.phrase.text),
            "prompt_version": dset.prompt_version,
            "config": {
                "model": dset.config.model_name,
                "temperature": dset.config.temperature,
                "top_p": dset.config.top_p,
                "max_tokens": dset.config.max_tokens,
                "k": dset.config.k,
            },
            "descriptions": list(dset.descriptions),
        }
        fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as handle:
                json.dump(record, handle, indent=2)
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
        return path

    @staticmethod
    def _decode(record) -> DescriptionSet:
        if not isinstance(record, dict):
            raise CacheCorrupt("record is not an object")
        for field_name in ("phrase", "prompt_version", "config", "descriptions"):
            if field_name not in record:
                raise CacheCorrupt(f"record missing field {field_name!r}")
        cfg = record["config"]
        if not isinstance(cfg, dict):
            raise CacheCorrupt("config is not an object")
        for field_name in ("model", "temperature", "top_p", "max_tokens", "k"):
            if field_name not in cfg:
                raise CacheCorrupt(f"config missing field {field_name!r}")
        descriptions = record["descriptions"]
        if not isinstance(descriptions, list) or not all(
            isinstance(d, str) and d.strip() for d in descriptions
        ):
            raise CacheCorrupt("descriptions must be a list of nonempty strings")
        try:
            config = LlmConfig(
                model_name=cfg["model"],
                temperature=cfg["temperature"],
                top_p=cfg["top_p"],
                max_tokens=cfg["max_tokens"],
                k=cfg["k"],
            )
            return DescriptionSet(
                phrase=ActionPhrase(record["phrase"]),
                descriptions=tuple(descriptions),
                config=config,
                prompt_version=record["prompt_version"],
            )
        except ValidationError as exc:
            raise CacheCorrupt(str(exc)) from exc


def cached_descriptions(
    phrase: ActionPhrase | str,
    config: LlmConfig,
    prompt_version: str,
    cache: DescriptionCache,
    client: LlmClient,
) -> DescriptionSet:
    """Return the cached description set for the key, generating it on a miss.

    The phrase is normalized (trim + lowercase) before keying, so surface
    variants of one label share a single record and the stored set is the
    one returned on every call.
    """
    text = phrase.text if isinstance(phrase, ActionPhrase) else phrase
    normalized = ActionPhrase(normalize_phrase(text))
    hit = cache.get(normalized, prompt_version, config)
    if hit is not None:
        return hit
    prompt = build_prompt(normalized, prompt_version)
    dset = generate_descriptions(prompt, config, client)
    cache.put(dset)
    return dset
