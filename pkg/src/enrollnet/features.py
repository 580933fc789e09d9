"""Feature assembly: records + embedding stores -> model-ready bundles.

The cross-network input is a fixed-length vector of one-hot, numeric and
pooled-embedding groups laid out by a FeatureSchema fitted on training data
only.  Criteria text becomes per-sentence matrices of word vectors for the
attention stack (or one pooled vector per sentence in "sentence" mode).
"""

import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingStore, StubConfig, mean_pool, stub_vector
from .ingest import GENDERS, PHASES, TrialRecord

GROUP_KINDS = ("onehot", "numeric", "embedding")
CRITERIA_MODES = ("word", "sentence")
GEO_OTHER = "other"

SCHEMA_FORMAT_VERSION = 1


class SchemaMismatch(ValueError):
    pass


@dataclass(frozen=True)
class FeatureGroup:
    name: str
    kind: str
    offset: int
    width: int


@dataclass
class FeatureSchema:
    """Layout of the cross-input vector plus criteria-embedding settings."""

    embedding_dim: int
    geo_vocab: list
    criteria_mode: str = "word"
    stub_seed: int = 42
    groups: list = field(default_factory=list)

    def __post_init__(self):
        if self.criteria_mode not in CRITERIA_MODES:
            raise SchemaMismatch(f"criteria_mode {self.criteria_mode!r} not in {CRITERIA_MODES}")
        if self.embedding_dim < 1:
            raise SchemaMismatch("embedding_dim must be >= 1")
        if not self.groups:
            self.groups = self._build_groups()
        self.validate()

    def _build_groups(self):
        layout = [
            ("gender", "onehot", len(GENDERS)),
            ("phase", "onehot", len(PHASES)),
            ("country", "onehot", len(self.geo_vocab) + 1),
            ("age", "numeric", 3),
            ("criteria_count", "numeric", 3),
            ("drug_embedding", "embedding", self.embedding_dim),
            ("disease_embedding", "embedding", self.embedding_dim),
            ("llm_drug_embedding", "embedding", self.embedding_dim),
            ("llm_disease_embedding", "embedding", self.embedding_dim),
        ]
        groups = []
        offset = 0
        for name, kind, width in layout:
            groups.append(FeatureGroup(name, kind, offset, width))
            offset += width
        return groups

    @property
    def cross_width(self) -> int:
        last = self.groups[-1]
        return last.offset + last.width

    def group(self, name: str) -> FeatureGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise SchemaMismatch(f"no feature group named {name!r}")

    def validate(self) -> None:
        """Groups must be contiguous, non-overlapping and cover [0, width)."""
        offset = 0
        for g in self.groups:
            if g.kind not in GROUP_KINDS:
                raise SchemaMismatch(f"group {g.name} has unknown kind {g.kind!r}")
            if g.offset != offset or g.width < 1:
                raise SchemaMismatch(f"group {g.name} breaks the contiguous layout")
            offset += g.width

    def to_json(self) -> dict:
        return {
            "format_version": SCHEMA_FORMAT_VERSION,
            "embedding_dim": self.embedding_dim,
            "cross_width": self.cross_width,
            "criteria_mode": self.criteria_mode,
            "stub_seed": self.stub_seed,
            "geo_vocab": list(self.geo_vocab),
            "groups": [
                {"name": g.name, "kind": g.kind, "offset": g.offset, "width": g.width}
                for g in self.groups
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSchema":
        schema = cls(
            embedding_dim=obj["embedding_dim"],
            geo_vocab=list(obj["geo_vocab"]),
            criteria_mode=obj.get("criteria_mode", "word"),
            stub_seed=obj.get("stub_seed", 42),
            groups=[FeatureGroup(**g) for g in obj["groups"]],
        )
        if schema.cross_width != obj.get("cross_width", schema.cross_width):
            raise SchemaMismatch("schema cross_width disagrees with group layout")
        return schema


def fit_schema(
    train_records,
    embedding_dim: int,
    top_k_countries: int = 30,
    criteria_mode: str = "word",
    stub_seed: int = 42,
) -> FeatureSchema:
    """Fit the schema on training records only.

    The geo vocabulary is the top-K first-listed countries by frequency
    (ties broken by name); unseen test-time countries fall into "other", so
    applying the schema never changes its dimensions.
    """
    counts = Counter()
    for record in train_records:
        if record.countries:
            counts[record.countries[0]] += 1
    vocab = [c for c, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k_countries]]
    return FeatureSchema(
        embedding_dim=embedding_dim,
        geo_vocab=vocab,
        criteria_mode=criteria_mode,
        stub_seed=stub_seed,
    )


@dataclass
class FeatureStores:
    """Embedding providers for assembly.

    Missing drug/disease/word/sentence stores fall back to the deterministic
    stub (salted per kind), so every entity keeps a distinguishable non-zero
    vector.  The LLM groups are zero vectors unless an LLM store is supplied,
    which makes enabling them a pure store swap.
    """

    stub: StubConfig
    drug: EmbeddingStore | None = None
    disease: EmbeddingStore | None = None
    word: EmbeddingStore | None = None
    sentence: EmbeddingStore | None = None
    llm_drug: EmbeddingStore | None = None
    llm_disease: EmbeddingStore | None = None

    def validate_dim(self, embedding_dim: int) -> None:
        if self.stub.dimension != embedding_dim:
            raise SchemaMismatch(
                f"stub dimension {self.stub.dimension} != schema embedding_dim {embedding_dim}"
            )
        for name in ("drug", "disease", "word", "sentence", "llm_drug", "llm_disease"):
            store = getattr(self, name)
            if store is not None and store.dimension != embedding_dim:
                raise SchemaMismatch(
                    f"{name} store dimension {store.dimension} != schema embedding_dim {embedding_dim}"
                )


@dataclass
class FeatureBundle:
    """Assembled model input for one trial.

    `inclusion_words` / `exclusion_words` hold one (num_words, dim) matrix
    per criterion sentence.  `completion_date` rides along solely for the
    temporal validation carve-out during training.
    """

    nct_id: str
    cross_input: np.ndarray
    inclusion_words: list
    exclusion_words: list
    label: int | None = None
    completion_date: str | None = None


def encode_categoricals(record: TrialRecord, schema: FeatureSchema) -> dict:
    """One-hot groups for gender, phase and first-listed country.

    Each group sums to exactly 1; countries outside the fitted vocabulary
    (and trials with no country at all) light the trailing "other" slot.
    """
    gender = np.zeros(len(GENDERS))
    gender[GENDERS.index(record.gender)] = 1.0
    phase = np.zeros(len(PHASES))
    phase[PHASES.index(record.phase)] = 1.0
    country = np.zeros(len(schema.geo_vocab) + 1)
    first = record.countries[0] if record.countries else None
    if first is not None and first in schema.geo_vocab:
        country[schema.geo_vocab.index(first)] = 1.0
    else:
        country[-1] = 1.0
    return {"gender": gender, "phase": phase, "country": country}


def encode_age(record: TrialRecord) -> np.ndarray:
    """(min, max, max-min) verbatim; sentinels pass through unclamped."""
    return np.array(
        [record.min_age_years, record.max_age_years, record.max_age_years - record.min_age_years]
    )


def criteria_counts(record: TrialRecord) -> np.ndarray:
    q = len(record.inclusion)
    r = len(record.exclusion)
    return np.array([q, r, q + r], dtype=np.float64)


def _provide(key: str, store: EmbeddingStore | None, stub_cfg: StubConfig | None, dim: int):
    if store is not None:
        hit = store.lookup(key)
        if hit is not None:
            return hit
    if stub_cfg is not None:
        return stub_vector(stub_cfg, key)
    return np.zeros(dim)


def embed_entity_set(names, store, stub_cfg, dim: int) -> np.ndarray:
    """Mean-pooled vector over entity names; empty set -> zero vector."""
    if not names:
        return np.zeros(dim)
    return mean_pool([_provide(name, store, stub_cfg, dim) for name in names])


def tokenize(sentence: str) -> list:
    """Whitespace split with surrounding punctuation stripped per token."""
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


def sentence_token_texts(sentence: str, mode: str) -> list:
    """Token texts feeding the word-level attention for one sentence.

    Word mode tokenizes; sentence mode treats the whole sentence as a single
    pseudo-token carrying its sentence-level embedding.
    """
    if mode == "word":
        return tokenize(sentence)
    return [sentence]


def embed_criteria(record: TrialRecord, schema: FeatureSchema, stores: FeatureStores):
    """Per-sentence word-vector matrices for both criteria groups.

    Sentences that tokenize to nothing are dropped, mirroring how they carry
    no signal for the word-level attention.
    """
    dim = schema.embedding_dim
    if schema.criteria_mode == "word":
        store, salt = stores.word, "Word"
    else:
        store, salt = stores.sentence, "CriterionSentence"
    stub_cfg = stores.stub.derive(salt)

    def embed_group(sentences):
        matrices = []
        for sentence in sentences:
            texts = sentence_token_texts(sentence, schema.criteria_mode)
            if not texts:
                continue
            matrices.append(np.stack([_provide(t, store, stub_cfg, dim) for t in texts]))
        return matrices

    return embed_group(record.inclusion), embed_group(record.exclusion)


def assemble(record: TrialRecord, schema: FeatureSchema, stores: FeatureStores) -> FeatureBundle:
    """Fill the cross-input vector group by group and attach criteria matrices."""
    stores.validate_dim(schema.embedding_dim)
    dim = schema.embedding_dim
    onehots = encode_categoricals(record, schema)
    values = {
        **onehots,
        "age": encode_age(record),
        "criteria_count": criteria_counts(record),
        "drug_embedding": embed_entity_set(
            record.drugs, stores.drug, stores.stub.derive("DrugName"), dim
        ),
        "disease_embedding": embed_entity_set(
            record.diseases, stores.disease, stores.stub.derive("DiseaseName"), dim
        ),
        "llm_drug_embedding": embed_entity_set(
            record.drugs,
            stores.llm_drug,
            stores.stub.derive("LlmDrug") if stores.llm_drug is not None else None,
            dim,
        ),
        "llm_disease_embedding": embed_entity_set(
            record.diseases,
            stores.llm_disease,
            stores.stub.derive("LlmDisease") if stores.llm_disease is not None else None,
            dim,
        ),
    }
    cross = np.zeros(schema.cross_width)
    for group in schema.groups:
        vec = values[group.name]
        if vec.shape != (group.width,):
            raise SchemaMismatch(
                f"group {group.name} produced shape {vec.shape}, schema width {group.width}"
            )
        cross[group.offset : group.offset + group.width] = vec
    inclusion_words, exclusion_words = embed_criteria(record, schema, stores)
    return FeatureBundle(
        nct_id=record.nct_id,
        cross_input=cross,
        inclusion_words=inclusion_words,
        exclusion_words=exclusion_words,
        label=record.label,
        completion_date=record.completion_date,
    )


def featurize_records(records, schema: FeatureSchema, stores: FeatureStores):
    return [assemble(record, schema, stores) for record in records]


def write_schema_json(schema: FeatureSchema, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_json(), fh, indent=2)
        fh.write("\n")


def read_schema_json(path: str) -> FeatureSchema:
    with open(path, encoding="utf-8") as fh:
        return FeatureSchema.from_json(json.load(fh))


def write_bundles_jsonl(bundles, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for b in bundles:
            obj = {
                "nct_id": b.nct_id,
                "label": b.label,
                "completion_date": b.completion_date,
                "cross_input": b.cross_input.tolist(),
                "inclusion_words": [m.tolist() for m in b.inclusion_words],
                "exclusion_words": [m.tolist() for m in b.exclusion_words],
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_bundles_jsonl(path: str, schema: FeatureSchema | None = None):
    """Load bundles, optionally validating widths against a schema."""
    bundles = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            bundle = FeatureBundle(
                nct_id=obj["nct_id"],
                cross_input=np.asarray(obj["cross_input"], dtype=np.float64),
                inclusion_words=[
                    np.asarray(m, dtype=np.float64) for m in obj["inclusion_words"]
                ],
                exclusion_words=[
                    np.asarray(m, dtype=np.float64) for m in obj["exclusion_words"]
                ],
                label=obj.get("label"),
                completion_date=obj.get("completion_date"),
            )
            if schema is not None:
                if bundle.cross_input.shape != (schema.cross_width,):
                    raise SchemaMismatch(
                        f"{path}:{lineno}: cross_input has length "
                        f"{bundle.cross_input.shape[0]}, schema width {schema.cross_width}"
                    )
                for matrices in (bundle.inclusion_words, bundle.exclusion_words):
                    for m in matrices:
                        if m.ndim != 2 or m.shape[1] != schema.embedding_dim:
                            raise SchemaMismatch(
                                f"{path}:{lineno}: word matrix shape {m.shape} does not "
                                f"match embedding_dim {schema.embedding_dim}"
                            )
            bundles.append(bundle)
    return bundles
