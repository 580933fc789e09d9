"""Prompt templates for drug/disease context generation.

The templates are frozen verbatim (see the golden files in the test suite);
build_prompt substitutes the entity name inside the <string> tags and does
nothing else.
"""

import hashlib
from dataclasses import dataclass

ENTITY_KINDS = ("drug", "disease")


class EmptyName(ValueError):
    pass


DRUG_SYSTEM_PROMPT = """You are a highly knowledgeable clinical pharmacologist. Given a string that contains the name of a drug, please:

- Provide the name of the drug.

- Offer a comprehensive description of the drug, including:

-- Mechanism of action

-- Common uses

-- Notable side effects

-- Discuss the difficulty of recruiting patients for clinical trials involving this drug, including the reasons behind these challenges.

Noted instruction: Please respond with fewer than 100 words."""

DRUG_USER_TEMPLATE = "The following string contains the name of a drug: <string>{drug}</string>"

DISEASE_SYSTEM_PROMPT = """You are a highly knowledgeable clinical epidemiologist. Given a string that contains the name of a disease, please:

- Provide the name of the disease.

- Offer a comprehensive description of the disease, including:

-- Pathogenesis (mechanism of disease development)

-- Common symptoms

-- Typical treatment options

-- Discuss the difficulty of recruiting patients for clinical trials involving this disease, including the reasons behind these challenges.

Noted instruction: Please respond with fewer than 100 words."""

DISEASE_USER_TEMPLATE = (
    "The following string contains the name of a disease: <string>{disease}</string>"
)


@dataclass(frozen=True)
class PromptPair:
    system: str
    user: str
    kind: str
    name: str

    @property
    def prompt_hash(self) -> str:
        payload = "\x1f".join((self.kind, self.system, self.user))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def build_prompt(kind: str, name: str) -> PromptPair:
    """Exact template substitution; no other transformation of the name."""
    if kind not in ENTITY_KINDS:
        raise ValueError(f"kind must be one of {ENTITY_KINDS}, got {kind!r}")
    if not name:
        raise EmptyName("entity name must be non-empty")
    if kind == "drug":
        return PromptPair(
            system=DRUG_SYSTEM_PROMPT,
            user=DRUG_USER_TEMPLATE.replace("{drug}", name),
            kind=kind,
            name=name,
        )
    return PromptPair(
        system=DISEASE_SYSTEM_PROMPT,
        user=DISEASE_USER_TEMPLATE.replace("{disease}", name),
        kind=kind,
        name=name,
    )
