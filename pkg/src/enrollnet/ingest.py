"""Registry ingestion: XML parsing, label derivation, temporal splits, summaries.

Input is either a directory of legacy ClinicalTrials.gov-style XML files or
the canonical line-delimited JSON produced by this module.  All downstream
modules consume the canonical records, one JSON object per line with the
field names of TrialRecord.
"""

import datetime as dt
import json
import math
import os
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field, replace, asdict

GENDERS = ("All", "Female", "Male")
PHASES = ("I", "II", "III", "IV")

AGE_MISSING = -1.0

_NCT_PATTERN = re.compile(r"^NCT\d{8}$")
_DATE_PATTERN = re.compile(r"^\d{4}-\d{2}(-\d{2})?$")
_PHASE_TEXT = re.compile(r"^phase\s*(1|2|3|4|iv|iii|ii|i)$", re.IGNORECASE)
_PHASE_MAP = {"1": "I", "2": "II", "3": "III", "4": "IV", "i": "I", "ii": "II", "iii": "III", "iv": "IV"}

_AGE = re.compile(r"^(\d+(?:\.\d+)?)\s*(year|month|week|day)s?$", re.IGNORECASE)
_AGE_UNIT_YEARS = {"year": 1.0, "month": 1.0 / 12.0, "week": 1.0 / 52.0, "day": 1.0 / 365.0}

_CRITERIA_HEADER = re.compile(r"(inclusion|exclusion)\s+criteria\s*:?", re.IGNORECASE)
_SENTENCE_SPLIT = re.compile(r"[\n;]+")
_BULLET = re.compile(r"^(?:[\s\-\*•‣·–—]+|\(?\d{1,3}[.)]\s+)")


class InvalidRecord(ValueError):
    """A record violates the TrialRecord invariants."""


class Rejection(Exception):
    """Base class for per-trial ingestion rejections."""

    reason = "rejected"

    def __init__(self, message: str, nct_id: str | None = None):
        super().__init__(message)
        self.nct_id = nct_id


class MalformedXml(Rejection):
    reason = "malformed_xml"


class MissingRequiredField(Rejection):
    reason = "missing_required_field"


class NonDrugTrial(Rejection):
    reason = "non_drug_trial"


class UnmappedPhase(Rejection):
    reason = "unmapped_phase"


class DuplicateNctId(Rejection):
    reason = "duplicate_nct_id"


class EmptyDataset(ValueError):
    pass


@dataclass
class TrialRecord:
    """One clinical trial in canonical form.

    Ages are in years with -1.0 meaning missing.  Dates are "YYYY-MM" or
    "YYYY-MM-DD" strings; a missing day is treated as the 1st for ordering.
    """

    nct_id: str
    drugs: list
    diseases: list
    inclusion: list
    exclusion: list
    gender: str
    min_age_years: float
    max_age_years: float
    phase: str
    countries: list = field(default_factory=list)
    states: list = field(default_factory=list)
    cities: list = field(default_factory=list)
    start_date: str | None = None
    completion_date: str | None = None
    status_raw: str = ""
    label: int | None = None

    def __post_init__(self):
        if not _NCT_PATTERN.match(self.nct_id):
            raise InvalidRecord(f"nct_id {self.nct_id!r} does not match NCT + 8 digits")
        for name in ("min_age_years", "max_age_years"):
            age = getattr(self, name)
            if not (age == AGE_MISSING or age >= 0.0):
                raise InvalidRecord(f"{name}={age} must be -1.0 or >= 0")
        if self.gender not in GENDERS:
            raise InvalidRecord(f"gender {self.gender!r} not in {GENDERS}")
        if self.phase not in PHASES:
            raise InvalidRecord(f"phase {self.phase!r} not in {PHASES}")
        for name in ("inclusion", "exclusion"):
            for sentence in getattr(self, name):
                if not sentence.strip():
                    raise InvalidRecord(f"{name} contains an empty sentence")
        for name in ("start_date", "completion_date"):
            value = getattr(self, name)
            if value is not None and not _DATE_PATTERN.match(value):
                raise InvalidRecord(f"{name}={value!r} is not YYYY-MM or YYYY-MM-DD")
        if self.label is not None and self.label not in (0, 1):
            raise InvalidRecord(f"label {self.label!r} must be 0, 1 or null")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrialRecord":
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        return cls(**{k: v for k, v in obj.items() if k in known})


def parse_partial_date(text: str) -> dt.date:
    """Canonical "YYYY-MM[-DD]" string to a date (missing day -> 1st)."""
    parts = [int(p) for p in text.split("-")]
    if len(parts) == 2:
        parts.append(1)
    return dt.date(*parts)


def parse_age_text(text: str | None) -> tuple[float, bool]:
    """Registry age string to years.

    Returns (years, recognized).  "N/A" and absent values are recognized
    misses; anything that is neither those nor "<number> <unit>" with unit in
    Years/Months/Weeks/Days comes back as (-1.0, False) so callers can count
    source noise without clamping it away.
    """
    if text is None:
        return AGE_MISSING, True
    stripped = text.strip()
    if not stripped or stripped.upper() == "N/A":
        return AGE_MISSING, True
    match = _AGE.match(stripped)
    if not match:
        return AGE_MISSING, False
    return float(match.group(1)) * _AGE_UNIT_YEARS[match.group(2).lower()], True


def clean_criterion_sentence(text: str) -> str:
    """Trim bullets/numbering and a trailing period; empty result means drop.

    A sentence is kept only if it still contains an alphanumeric character,
    which removes pure punctuation/bullet debris while keeping single-letter
    criteria intact.
    """
    sentence = text.strip()
    previous = None
    while previous != sentence:
        previous = sentence
        sentence = _BULLET.sub("", sentence).strip()
    if sentence.endswith(".") and not sentence.endswith(".."):
        sentence = sentence[:-1].rstrip()
    if not any(ch.isalnum() for ch in sentence):
        return ""
    if re.fullmatch(r"\(?\d{1,3}[.)]?", sentence):
        return ""  # orphaned numbering marker
    return sentence


def segment_criteria(textblock: str | None) -> tuple[list, list]:
    """Split an eligibility textblock into inclusion/exclusion sentences.

    Sections are delimited by case-insensitive "Inclusion Criteria" /
    "Exclusion Criteria" headers; text before any header counts as inclusion.
    Within a section, sentences are split on newlines and semicolons.
    """
    inclusion: list = []
    exclusion: list = []
    if not textblock:
        return inclusion, exclusion

    def consume(chunk: str, target: list) -> None:
        for piece in _SENTENCE_SPLIT.split(chunk):
            cleaned = clean_criterion_sentence(piece)
            if cleaned:
                target.append(cleaned)

    position = 0
    current = inclusion
    for match in _CRITERIA_HEADER.finditer(textblock):
        consume(textblock[position : match.start()], current)
        current = inclusion if match.group(1).lower() == "inclusion" else exclusion
        position = match.end()
    consume(textblock[position:], current)
    return inclusion, exclusion


_MONTH_FORMATS = ("%B %d, %Y", "%b %d, %Y", "%B %Y", "%b %Y", "%Y-%m-%d", "%Y-%m")


def parse_registry_date(text: str | None) -> str | None:
    """Registry date text ("July 2006", "June 12, 2009", ISO) to canonical form."""
    if text is None:
        return None
    stripped = text.strip()
    if not stripped:
        return None
    for fmt in _MONTH_FORMATS:
        try:
            parsed = dt.datetime.strptime(stripped, fmt)
        except ValueError:
            continue
        if "%d" in fmt:
            return parsed.strftime("%Y-%m-%d")
        return parsed.strftime("%Y-%m")
    return None


def _dedupe(items) -> list:
    seen = set()
    out = []
    for item in items:
        if item not in seen:
            seen.add(item)
            out.append(item)
    return out


def _map_gender(text: str | None, warnings: Counter | None) -> str:
    if text is None or not text.strip():
        return "All"
    lowered = text.strip().lower()
    if lowered in ("all", "both"):
        return "All"
    if lowered == "female":
        return "Female"
    if lowered == "male":
        return "Male"
    if warnings is not None:
        warnings["unknown_gender"] += 1
    return "All"


def parse_registry_xml(xml_document: str, warnings: Counter | None = None) -> TrialRecord:
    """Parse one legacy registry XML document into a TrialRecord.

    Raises MalformedXml for unparseable input, MissingRequiredField when the
    NCT id is absent, NonDrugTrial when no intervention of type Drug exists,
    and UnmappedPhase when the phase is missing or outside I-IV (combined
    designations such as "Phase 1/Phase 2" are excluded from modeling).
    Unparseable ages become -1.0 and are tallied in `warnings`.
    """
    try:
        root = ET.fromstring(xml_document)
    except ET.ParseError as exc:
        raise MalformedXml(f"unparseable XML: {exc}") from exc

    nct_id = _text(root, "id_info/nct_id") or _text(root, "nct_id")
    if not nct_id:
        raise MissingRequiredField("no nct_id element")
    nct_id = nct_id.strip()

    drugs = []
    for intervention in root.iter("intervention"):
        kind = (_text(intervention, "intervention_type") or "").strip().lower()
        name = (_text(intervention, "intervention_name") or "").strip()
        if kind == "drug" and name:
            drugs.append(name)
    drugs = _dedupe(drugs)
    if not drugs:
        raise NonDrugTrial("no drug interventions", nct_id=nct_id)

    phase_text = (_text(root, "phase") or "").strip()
    match = _PHASE_TEXT.match(phase_text)
    if not match:
        raise UnmappedPhase(f"phase {phase_text!r} not one of I-IV", nct_id=nct_id)
    phase = _PHASE_MAP[match.group(1).lower()]

    diseases = _dedupe(
        el.text.strip() for el in root.iter("condition") if el.text and el.text.strip()
    )

    eligibility = root.find("eligibility")
    textblock = None
    gender_text = None
    min_age_text = None
    max_age_text = None
    if eligibility is not None:
        textblock = _text(eligibility, "criteria/textblock")
        gender_text = _text(eligibility, "gender")
        min_age_text = _text(eligibility, "minimum_age")
        max_age_text = _text(eligibility, "maximum_age")
    inclusion, exclusion = segment_criteria(textblock)

    min_age, ok_min = parse_age_text(min_age_text)
    max_age, ok_max = parse_age_text(max_age_text)
    if warnings is not None:
        warnings["unparseable_age"] += (not ok_min) + (not ok_max)

    countries = [el.text.strip() for el in root.findall("location_countries/country") if el.text]
    states = []
    cities = []
    for address in root.iter("address"):
        country = _text(address, "country")
        state = _text(address, "state")
        city = _text(address, "city")
        if country and country.strip():
            countries.append(country.strip())
        if state and state.strip():
            states.append(state.strip())
        if city and city.strip():
            cities.append(city.strip())

    completion = parse_registry_date(_text(root, "completion_date"))
    if completion is None:
        completion = parse_registry_date(_text(root, "primary_completion_date"))

    return TrialRecord(
        nct_id=nct_id,
        drugs=drugs,
        diseases=diseases,
        inclusion=inclusion,
        exclusion=exclusion,
        gender=_map_gender(gender_text, warnings),
        min_age_years=min_age,
        max_age_years=max_age,
        phase=phase,
        countries=_dedupe(countries),
        states=_dedupe(states),
        cities=_dedupe(cities),
        start_date=parse_registry_date(_text(root, "start_date")),
        completion_date=completion,
        status_raw=(_text(root, "overall_status") or "").strip(),
    )


def _text(element, path: str) -> str | None:
    found = element.find(path)
    return found.text if found is not None else None


DEFAULT_POSITIVE_STATUSES = ("Completed",)
DEFAULT_NEGATIVE_STATUSES = ("Withdrawn", "Terminated", "Suspended")


@dataclass
class LabelRule:
    """Total mapping from registry status to {0, 1, Exclude}.

    The default treats Completed as enrollment success and Withdrawn /
    Terminated / Suspended as failure; every other status is excluded.  The
    rule is configurable because registries do not record enrollment success
    directly.  Optional stop-reason substrings override the status mapping.
    """

    positive: tuple = DEFAULT_POSITIVE_STATUSES
    negative: tuple = DEFAULT_NEGATIVE_STATUSES
    stop_reason_overrides: tuple = ()  # (substring, label) pairs, case-insensitive

    def classify(self, status_raw: str, stop_reason: str | None = None) -> int | None:
        """0/1 label, or None for Exclude."""
        if stop_reason:
            lowered = stop_reason.lower()
            for substring, label in self.stop_reason_overrides:
                if substring.lower() in lowered:
                    return label
        status = status_raw.strip().lower()
        if status in (s.lower() for s in self.positive):
            return 1
        if status in (s.lower() for s in self.negative):
            return 0
        return None

    @classmethod
    def from_json_file(cls, path: str) -> "LabelRule":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(
            positive=tuple(obj.get("positive", DEFAULT_POSITIVE_STATUSES)),
            negative=tuple(obj.get("negative", DEFAULT_NEGATIVE_STATUSES)),
            stop_reason_overrides=tuple(
                (str(sub), int(lab)) for sub, lab in obj.get("stop_reason_overrides", [])
            ),
        )


def derive_label(record: TrialRecord, rule: LabelRule) -> TrialRecord | None:
    """Labeled copy of the record, or None when the rule excludes it."""
    label = rule.classify(record.status_raw)
    if label is None:
        return None
    return replace(record, label=label)


def label_records(records, rule: LabelRule):
    """Apply the rule to every record.

    Returns (labeled, rejections, excluded_status_counts); the counter logs
    how many records each unmapped status removed.
    """
    labeled = []
    rejections = []
    excluded = Counter()
    for record in records:
        result = derive_label(record, rule)
        if result is None:
            excluded[record.status_raw] += 1
            rejections.append(
                RejectionEntry(record.nct_id, f"unmapped_status:{record.status_raw}")
            )
        else:
            labeled.append(result)
    return labeled, rejections, excluded


@dataclass(frozen=True)
class RejectionEntry:
    nct_id: str | None
    reason: str


def default_train_rule(record: TrialRecord, cutoff: dt.date) -> bool:
    return record.completion_date is not None and parse_partial_date(record.completion_date) < cutoff


def default_test_rule(record: TrialRecord, cutoff: dt.date) -> bool:
    return record.start_date is not None and parse_partial_date(record.start_date) >= cutoff


@dataclass
class SplitConfig:
    """Temporal leakage-free split around a cutoff date.

    Train takes trials concluded strictly before the cutoff, test takes
    trials commencing on/after it, everything else (including trials
    spanning the cutoff) is dropped.  Rules are evaluated in train, test,
    drop order so the outputs are disjoint by construction.
    """

    cutoff_date: dt.date = dt.date(2015, 1, 1)
    train_rule: object = None
    test_rule: object = None

    def __post_init__(self):
        if self.train_rule is None:
            self.train_rule = default_train_rule
        if self.test_rule is None:
            self.test_rule = default_test_rule


def temporal_split(records, cfg: SplitConfig | None = None):
    """Split records into (train, test, dropped) and verify the invariants."""
    cfg = cfg or SplitConfig()
    train, test, dropped = [], [], []
    for record in records:
        if cfg.train_rule(record, cfg.cutoff_date):
            train.append(record)
        elif cfg.test_rule(record, cfg.cutoff_date):
            test.append(record)
        else:
            dropped.append(record)
    _verify_split(train, test, cfg)
    return train, test, dropped


def _verify_split(train, test, cfg: SplitConfig) -> None:
    train_ids = {r.nct_id for r in train}
    test_ids = {r.nct_id for r in test}
    overlap = train_ids & test_ids
    if overlap:
        raise RuntimeError(f"split leakage: {sorted(overlap)[:5]} in both train and test")
    if cfg.train_rule is default_train_rule and cfg.test_rule is default_test_rule:
        for record in train:
            if parse_partial_date(record.completion_date) >= cfg.cutoff_date:
                raise RuntimeError(f"{record.nct_id} in train but completed after cutoff")
        for record in test:
            if parse_partial_date(record.start_date) < cfg.cutoff_date:
                raise RuntimeError(f"{record.nct_id} in test but started before cutoff")


def nearest_rank_quantile(sorted_values, p: float) -> float:
    """Nearest-rank quantile on pre-sorted data: smallest value with cumulative
    frequency >= p (p=0 gives the minimum)."""
    n = len(sorted_values)
    if n == 0:
        raise EmptyDataset("quantile of empty data")
    rank = max(1, math.ceil(p * n))
    return float(sorted_values[rank - 1])


def _stat_block(values) -> dict:
    ordered = sorted(values)
    return {
        "mean": float(sum(ordered) / len(ordered)),
        "min": nearest_rank_quantile(ordered, 0.0),
        "p25": nearest_rank_quantile(ordered, 0.25),
        "p50": nearest_rank_quantile(ordered, 0.50),
        "p75": nearest_rank_quantile(ordered, 0.75),
        "max": float(ordered[-1]),
    }


NO_COUNTRY = "(none)"


@dataclass
class DatasetSummary:
    size: int
    phase_label_counts: dict
    gender_counts: dict
    country_counts: dict
    country_proportions: dict
    age_stats: dict
    criteria_stats: dict

    def to_dict(self) -> dict:
        return asdict(self)


def summarize_dataset(records) -> DatasetSummary:
    """Exact counts plus nearest-rank quantiles for ages and criteria counts.

    Countries are attributed to a record's first listed country, mirroring
    how the feature encoder treats multi-country trials.
    """
    records = list(records)
    if not records:
        raise EmptyDataset("summarize_dataset on empty record list")

    phase_counts = {p: {"negative": 0, "positive": 0, "unlabeled": 0} for p in PHASES}
    gender_counts = {g: 0 for g in GENDERS}
    country_counts: Counter = Counter()
    for record in records:
        bucket = phase_counts[record.phase]
        if record.label == 0:
            bucket["negative"] += 1
        elif record.label == 1:
            bucket["positive"] += 1
        else:
            bucket["unlabeled"] += 1
        gender_counts[record.gender] += 1
        country_counts[record.countries[0] if record.countries else NO_COUNTRY] += 1

    size = len(records)
    ordered_countries = sorted(country_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    age_stats = {
        "min_age": _stat_block([r.min_age_years for r in records]),
        "max_age": _stat_block([r.max_age_years for r in records]),
        "age_span": _stat_block([r.max_age_years - r.min_age_years for r in records]),
    }
    criteria_stats = {
        "inclusion": _stat_block([len(r.inclusion) for r in records]),
        "exclusion": _stat_block([len(r.exclusion) for r in records]),
        "total": _stat_block([len(r.inclusion) + len(r.exclusion) for r in records]),
    }
    return DatasetSummary(
        size=size,
        phase_label_counts=phase_counts,
        gender_counts=gender_counts,
        country_counts=dict(ordered_countries),
        country_proportions={c: n / size for c, n in ordered_countries},
        age_stats=age_stats,
        criteria_stats=criteria_stats,
    )


def write_records_jsonl(records, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")


def read_records_jsonl(path: str):
    """Load canonical records, enforcing invariants and nct_id uniqueness."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = TrialRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, TypeError, InvalidRecord) as exc:
                raise InvalidRecord(f"{path}:{lineno}: {exc}") from exc
            if record.nct_id in seen:
                raise DuplicateNctId(f"{path}:{lineno}: duplicate {record.nct_id}", record.nct_id)
            seen.add(record.nct_id)
            records.append(record)
    return records


def ingest_xml_dir(directory: str, warnings: Counter | None = None):
    """Parse every .xml file under `directory`.

    Returns (records sorted by nct_id, rejections).  Per-file failures are
    collected as RejectionEntry rows instead of aborting the run; duplicate
    NCT ids keep the first occurrence in file-name order.
    """
    records = []
    rejections = []
    seen = set()
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".xml"))
    for name in names:
        path = os.path.join(directory, name)
        try:
            with open(path, encoding="utf-8") as fh:
                record = parse_registry_xml(fh.read(), warnings=warnings)
        except Rejection as exc:
            rejections.append(RejectionEntry(exc.nct_id, f"{exc.reason}:{exc}"))
            continue
        if record.nct_id in seen:
            rejections.append(RejectionEntry(record.nct_id, "duplicate_nct_id"))
            continue
        seen.add(record.nct_id)
        records.append(record)
    records.sort(key=lambda r: r.nct_id)
    return records, rejections


def write_rejections_jsonl(rejections, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in rejections:
            fh.write(json.dumps({"nct_id": entry.nct_id, "reason": entry.reason}) + "\n")
