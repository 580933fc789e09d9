"""Offline LLM-and-embedding augmentation for the enrollment pipeline."""

__version__ = "0.1.0"

from .prompts import PromptPair, build_prompt, EmptyName
from .generate import (
    GenerationRecord,
    HttpChatClient,
    ModelUnavailable,
    EmptyResponse,
    generate_description,
    generate_all,
    load_cached_records,
)
from .encode import (
    EncoderLoadFailure,
    TransformerEncoder,
    embed_and_export,
    read_entity_inventory,
    write_store,
)

__all__ = [
    "PromptPair", "build_prompt", "EmptyName",
    "GenerationRecord", "HttpChatClient", "ModelUnavailable", "EmptyResponse",
    "generate_description", "generate_all", "load_cached_records",
    "EncoderLoadFailure", "TransformerEncoder", "embed_and_export",
    "read_entity_inventory", "write_store",
]
