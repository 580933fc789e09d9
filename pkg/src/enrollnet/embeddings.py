"""Text-to-vector lookup: file-backed embedding stores and a deterministic stub.

Stores are immutable keyed maps from normalized text to fixed-dimension
vectors.  The stub provider generates bit-exact pseudo-random vectors from a
hash of the key, so the whole pipeline runs offline with no model inference.
"""

import json
import math
import os
import re
from dataclasses import dataclass, field

import numpy as np

STORE_KINDS = (
    "DrugName",
    "DiseaseName",
    "CriterionSentence",
    "Word",
    "LlmDrug",
    "LlmDisease",
)

MANIFEST_NAME = "manifest.json"
VECTORS_NAME = "vectors.jsonl"

_WS = re.compile(r"\s+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class ZeroDimension(ValueError):
    pass


class EmptyList(ValueError):
    pass


class RaggedLengths(ValueError):
    pass


class BadManifest(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class CorruptLine(ValueError):
    pass


def normalize_key(text: str) -> str:
    """Lowercase, collapse internal whitespace, trim."""
    return _WS.sub(" ", text).strip().lower()


@dataclass
class EmbeddingStore:
    """Immutable keyed map text -> vector of fixed length `dimension`."""

    kind: str
    dimension: int
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in STORE_KINDS:
            raise BadManifest(f"unknown store kind {self.kind!r}")
        if self.dimension < 1:
            raise ZeroDimension(f"dimension must be >= 1, got {self.dimension}")

    def put(self, key: str, vector) -> None:
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise DimensionMismatch(
                f"vector for {key!r} has shape {vec.shape}, store dimension is {self.dimension}"
            )
        self.entries[normalize_key(key)] = vec

    def lookup(self, key: str):
        """Return the stored vector for the normalized key, or None on miss."""
        return self.entries.get(normalize_key(key))

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.dimension == other.dimension
            and self.entries.keys() == other.entries.keys()
            and all(np.array_equal(v, other.entries[k]) for k, v in self.entries.items())
        )


@dataclass(frozen=True)
class StubConfig:
    """Deterministic stub provider: same (seed, dimension, key) -> same vector."""

    seed: int
    dimension: int

    def derive(self, salt: str) -> "StubConfig":
        """Config with a salted seed, so per-kind stub streams stay distinct."""
        return StubConfig(seed=self.seed ^ _fnv1a64(salt), dimension=self.dimension)


def lookup_vector(store: EmbeddingStore, key: str):
    return store.lookup(key)


def _fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _splitmix64(state: int):
    # Standard splitmix64 step; returns (new_state, 64-bit output).
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z = z ^ (z >> 31)
    return state, z


def stub_vector(cfg: StubConfig, key: str) -> np.ndarray:
    """Deterministic vector with components in [-1/sqrt(d), 1/sqrt(d)).

    The stream is seeded by FNV-1a-64 of the normalized key XOR the config
    seed, then advanced with splitmix64; each draw keeps the top 53 bits so
    the mapping to [0, 1) is bit-exact on every platform.
    """
    d = cfg.dimension
    if d < 1:
        raise ZeroDimension(f"dimension must be >= 1, got {d}")
    state = _fnv1a64(normalize_key(key)) ^ (cfg.seed & _MASK64)
    scale = 1.0 / math.sqrt(d)
    out = np.empty(d, dtype=np.float64)
    for i in range(d):
        state, z = _splitmix64(state)
        unit = (z >> 11) * (2.0**-53)  # top 53 bits -> [0, 1)
        out[i] = (2.0 * unit - 1.0) * scale
    return out


def mean_pool(vectors) -> np.ndarray:
    """Component-wise arithmetic mean of equally sized vectors."""
    if len(vectors) == 0:
        raise EmptyList("mean_pool needs at least one vector")
    arrs = [np.asarray(v, dtype=np.float64) for v in vectors]
    width = arrs[0].shape
    if any(a.shape != width for a in arrs):
        raise RaggedLengths("mean_pool requires equal-length vectors")
    return np.mean(arrs, axis=0)


def _format_component(x: float) -> str:
    # 9 significant digits, the documented store serialization.
    return format(float(x), ".9g")


def save_store(store: EmbeddingStore, path: str) -> None:
    """Write manifest.json + vectors.jsonl under `path` (created if needed)."""
    os.makedirs(path, exist_ok=True)
    manifest = {"kind": store.kind, "dimension": store.dimension, "count": len(store)}
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(path, VECTORS_NAME), "w", encoding="utf-8") as fh:
        for key in sorted(store.entries):
            comps = ", ".join(_format_component(x) for x in store.entries[key])
            key_json = json.dumps(key, ensure_ascii=False)
            fh.write(f'{{"key": {key_json}, "vector": [{comps}]}}\n')


def load_store(path: str, expected_dim: int | None = None) -> EmbeddingStore:
    """Load a store directory written by save_store.

    Raises BadManifest for a missing/invalid manifest, DimensionMismatch when
    `expected_dim` disagrees with the manifest, CorruptLine for any vector
    line that does not parse or has the wrong length.
    """
    manifest_path = os.path.join(path, MANIFEST_NAME)
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BadManifest(f"cannot read manifest at {manifest_path}: {exc}") from exc
    kind = manifest.get("kind")
    dim = manifest.get("dimension")
    count = manifest.get("count")
    if kind not in STORE_KINDS or not isinstance(dim, int) or dim < 1:
        raise BadManifest(f"invalid manifest fields in {manifest_path}: {manifest}")
    if expected_dim is not None and dim != expected_dim:
        raise DimensionMismatch(f"store {path} has dimension {dim}, expected {expected_dim}")

    store = EmbeddingStore(kind=kind, dimension=dim)
    vectors_path = os.path.join(path, VECTORS_NAME)
    try:
        fh = open(vectors_path, encoding="utf-8")
    except OSError as exc:
        raise BadManifest(f"cannot read vectors at {vectors_path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                key = obj["key"]
                vec = np.asarray(obj["vector"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorruptLine(f"{vectors_path}:{lineno}: {exc}") from exc
            if vec.ndim != 1 or vec.shape[0] != dim:
                raise CorruptLine(
                    f"{vectors_path}:{lineno}: vector has {vec.size} components, manifest says {dim}"
                )
            norm = normalize_key(key)
            if norm in store.entries:
                raise CorruptLine(f"{vectors_path}:{lineno}: duplicate key {norm!r}")
            store.entries[norm] = vec
    if count is not None and count != len(store):
        raise BadManifest(
            f"manifest count {count} does not match {len(store)} entries in {vectors_path}"
        )
    return store
