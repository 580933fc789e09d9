"""Embedding generation and export in the pipeline's store-directory format.

A store directory is manifest.json {kind, dimension, count} plus
vectors.jsonl lines {"key": ..., "vector": [...]} with numbers serialized at
9 significant digits and keys normalized (lowercase, whitespace-collapsed).
Encoders are pluggable: the default is a biomedical transformer using the
[CLS] token (or token mean pooling), loaded lazily so everything else works
without model weights.
"""

import json
import os
import re
import unicodedata

import numpy as np

STORE_KINDS = (
    "DrugName",
    "DiseaseName",
    "CriterionSentence",
    "Word",
    "LlmDrug",
    "LlmDisease",
)

DEFAULT_ENCODER = "dmis-lab/biobert-base-cased-v1.1"

_WS = re.compile(r"\s+")


class EncoderLoadFailure(RuntimeError):
    pass


def normalize_key(text: str) -> str:
    return _WS.sub(" ", text).strip().lower()


class TransformerEncoder:
    """Sentence/name encoder backed by a pretrained transformer.

    pooling="cls" takes the [CLS] position of the last hidden state;
    pooling="mean" averages token states under the attention mask.
    Inference runs in eval mode with gradients disabled, so identical text
    always encodes to identical vectors.
    """

    def __init__(self, model_name: str = DEFAULT_ENCODER, pooling: str = "cls",
                 batch_size: int = 16, max_length: int = 512):
        if pooling not in ("cls", "mean"):
            raise ValueError(f"pooling must be cls or mean, got {pooling!r}")
        self.pooling = pooling
        self.batch_size = batch_size
        self.max_length = max_length
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer

            self._torch = torch
            self._tokenizer = AutoTokenizer.from_pretrained(model_name)
            self._model = AutoModel.from_pretrained(model_name)
            self._model.eval()
        except Exception as exc:
            raise EncoderLoadFailure(f"cannot load encoder {model_name!r}: {exc}") from exc
        self.dimension = int(self._model.config.hidden_size)
        self.model_name = model_name

    def encode(self, texts) -> np.ndarray:
        torch = self._torch
        chunks = []
        with torch.no_grad():
            for start in range(0, len(texts), self.batch_size):
                batch = list(texts[start : start + self.batch_size])
                inputs = self._tokenizer(
                    batch, padding=True, truncation=True,
                    max_length=self.max_length, return_tensors="pt",
                )
                hidden = self._model(**inputs).last_hidden_state
                if self.pooling == "cls":
                    pooled = hidden[:, 0, :]
                else:
                    mask = inputs["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                    pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1e-9)
                chunks.append(pooled.cpu().numpy().astype(np.float64))
        return np.vstack(chunks) if chunks else np.zeros((0, self.dimension))


def _format_component(x: float) -> str:
    return format(float(x), ".9g")


def write_store(entries, kind: str, dimension: int, out_dir: str) -> None:
    """Write (key, vector) pairs as a store directory; later duplicates of a
    normalized key are dropped."""
    if kind not in STORE_KINDS:
        raise ValueError(f"kind must be one of {STORE_KINDS}, got {kind!r}")
    deduped = {}
    for key, vector in entries:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (dimension,):
            raise ValueError(f"vector for {key!r} has shape {vector.shape}, want ({dimension},)")
        deduped.setdefault(normalize_key(key), vector)
    os.makedirs(out_dir, exist_ok=True)
    manifest = {"kind": kind, "dimension": dimension, "count": len(deduped)}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(out_dir, "vectors.jsonl"), "w", encoding="utf-8") as fh:
        for key in sorted(deduped):
            comps = ", ".join(_format_component(x) for x in deduped[key])
            key_json = json.dumps(key, ensure_ascii=False)
            fh.write(f'{{"key": {key_json}, "vector": [{comps}]}}\n')


def embed_and_export(texts_by_key: dict, kind: str, out_dir: str, encoder) -> int:
    """Encode the texts and write the store; keys map to their vectors.

    For name stores the key is the text itself; for LLM stores the key is
    the entity name and the text is its generated paragraph.  Returns the
    number of entries written.
    """
    keys = sorted(texts_by_key)
    if not keys:
        raise ValueError(f"nothing to export for kind {kind}")
    vectors = encoder.encode([texts_by_key[k] for k in keys])
    write_store(zip(keys, vectors), kind, encoder.dimension, out_dir)
    return len(keys)


def tokenize(sentence: str):
    """Whitespace split with surrounding punctuation stripped, mirroring the
    tokenization documented for the pipeline's word-level criteria features."""
    tokens = []
    for raw in sentence.split():
        start, end = 0, len(raw)
        while start < end and unicodedata.category(raw[start]).startswith("P"):
            start += 1
        while end > start and unicodedata.category(raw[end - 1]).startswith("P"):
            end -= 1
        if end > start:
            tokens.append(raw[start:end])
    return tokens


def read_entity_inventory(records_path: str) -> dict:
    """Entity inventories from a canonical records JSONL file.

    Returns {"drugs", "diseases", "sentences", "words"} as sorted unique
    lists; only the documented record fields are consumed.
    """
    drugs, diseases, sentences, words = set(), set(), set(), set()
    with open(records_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            drugs.update(record.get("drugs", []))
            diseases.update(record.get("diseases", []))
            for sentence in record.get("inclusion", []) + record.get("exclusion", []):
                sentences.add(sentence)
                words.update(tokenize(sentence))
    return {
        "drugs": sorted(drugs),
        "diseases": sorted(diseases),
        "sentences": sorted(sentences),
        "words": sorted(words),
    }
