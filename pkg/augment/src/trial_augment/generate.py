"""Cached, resumable description generation against an instruct model.

Responses are cached by prompt hash so corpus-scale generation can resume
after interruption; cache writes are atomic per entity, which keeps the
bounded-parallel workers idempotent.
"""

import datetime as dt
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict

import requests

from .prompts import PromptPair

log = logging.getLogger(__name__)

DEFAULT_MODEL_ID = "mistralai/Mistral-7B-Instruct-v0.3"
MAX_ATTEMPTS = 3
WORD_LIMIT = 100


class ModelUnavailable(RuntimeError):
    pass


class EmptyResponse(ValueError):
    pass


@dataclass
class GenerationRecord:
    name: str
    kind: str
    prompt_hash: str
    paragraph: str
    model_id: str
    timestamp: str
    over_length: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class HttpChatClient:
    """Minimal OpenAI-compatible chat-completions client."""

    def __init__(self, endpoint: str, model_id: str = DEFAULT_MODEL_ID,
                 api_key: str | None = None, timeout: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.model_id = model_id
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, system: str, user: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        response = requests.post(
            f"{self.endpoint}/chat/completions",
            headers=headers,
            json={
                "model": self.model_id,
                "messages": [
                    {"role": "system", "content": system},
                    {"role": "user", "content": user},
                ],
                "temperature": 0.0,
            },
            timeout=self.timeout,
        )
        response.raise_for_status()
        return response.json()["choices"][0]["message"]["content"]


def _cache_path(cache_dir: str, pair: PromptPair) -> str:
    return os.path.join(cache_dir, f"{pair.prompt_hash}.json")


def _read_cache(cache_dir: str, pair: PromptPair) -> GenerationRecord | None:
    path = _cache_path(cache_dir, pair)
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as fh:
        return GenerationRecord(**json.load(fh))


def _write_cache(cache_dir: str, pair: PromptPair, record: GenerationRecord) -> None:
    os.makedirs(cache_dir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=cache_dir, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(record.to_dict(), fh, ensure_ascii=False, indent=2)
    os.replace(tmp, _cache_path(cache_dir, pair))


def generate_description(pair: PromptPair, client, cache_dir: str | None = None,
                         max_attempts: int = MAX_ATTEMPTS) -> GenerationRecord:
    """One paragraph per entity, cache-first, with transport retries.

    The word-limit instruction lives in the prompt; over-length outputs are
    kept and flagged rather than filtered.
    """
    if cache_dir:
        cached = _read_cache(cache_dir, pair)
        if cached is not None:
            return cached

    last_error = None
    for attempt in range(1, max_attempts + 1):
        try:
            text = client.complete(pair.system, pair.user)
            break
        except requests.RequestException as exc:
            last_error = exc
            log.warning("attempt %d/%d for %r failed: %s", attempt, max_attempts, pair.name, exc)
    else:
        raise ModelUnavailable(
            f"model unreachable after {max_attempts} attempts for {pair.name!r}: {last_error}"
        )

    paragraph = (text or "").strip()
    if not paragraph:
        raise EmptyResponse(f"model returned an empty paragraph for {pair.name!r}")
    over_length = len(paragraph.split()) > WORD_LIMIT
    if over_length:
        log.warning("paragraph for %r exceeds %d words; keeping it", pair.name, WORD_LIMIT)
    record = GenerationRecord(
        name=pair.name,
        kind=pair.kind,
        prompt_hash=pair.prompt_hash,
        paragraph=paragraph,
        model_id=getattr(client, "model_id", DEFAULT_MODEL_ID),
        timestamp=dt.datetime.now(dt.timezone.utc).isoformat(),
        over_length=over_length,
    )
    if cache_dir:
        _write_cache(cache_dir, pair, record)
    return record


def generate_all(pairs, client, cache_dir: str, workers: int = 4):
    """Bounded-parallel generation over many prompts; cache-idempotent."""
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(generate_description, pair, client, cache_dir) for pair in pairs
        ]
        return [f.result() for f in futures]


def load_cached_records(cache_dir: str, kind: str | None = None):
    """Cached GenerationRecords sorted by entity name, optionally one kind.

    Drug and disease generations can share a cache directory; the per-record
    kind keeps their exports separate.
    """
    records = []
    if not os.path.isdir(cache_dir):
        return records
    for name in sorted(os.listdir(cache_dir)):
        if not name.endswith(".json"):
            continue
        with open(os.path.join(cache_dir, name), encoding="utf-8") as fh:
            record = GenerationRecord(**json.load(fh))
        if kind is None or record.kind == kind:
            records.append(record)
    records.sort(key=lambda r: r.name)
    return records
