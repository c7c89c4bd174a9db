"""Code-to-name vocabulary and phenotype grouping.

Vocabularies are tab-separated ``system<TAB>code<TAB>name`` files; phenotype
maps are ``system<TAB>code<TAB>phenotype_id`` (single-level CCS style).
Lookups key on (system, code) only, since a code's category is carried by
the visit, not the vocabulary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .core import NEGATIVE, POSITIVE, CodeCategory, MedicalCode, Visit
from .errors import VocabError

log = logging.getLogger(__name__)

VocabKey = tuple[str, str]  # (system value, code)


class FallbackPolicy(str, Enum):
    """What `map_code` does on a vocabulary miss."""

    RAW_CODE = "raw_code"  # render "code <system>:<code>"
    SKIP = "skip"          # return the empty marker; narration drops it
    ERROR = "error"        # raise VocabError


@dataclass
class CodeNameMap:
    """Display names for codes, plus the miss policy.

    `duplicate_count` is how many rows were overwritten while loading
    (last occurrence wins).
    """

    entries: dict[VocabKey, str] = field(default_factory=dict)
    fallback_policy: FallbackPolicy = FallbackPolicy.RAW_CODE
    duplicate_count: int = 0

    def __post_init__(self):
        for key, name in self.entries.items():
            if not name:
                raise VocabError(f"empty display name for {key}")


def _vocab_key(code: MedicalCode) -> VocabKey:
    return (code.system.value, code.code)


def load_vocab(path: str | Path, fallback_policy: FallbackPolicy = FallbackPolicy.RAW_CODE) -> CodeNameMap:
    """Load a TSV vocabulary. Duplicate (system, code) rows: last wins."""
    entries: dict[VocabKey, str] = {}
    duplicates = 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[2]:
                raise VocabError(f"{path}: line {lineno}: expected system<TAB>code<TAB>name")
            system, code, name = parts
            key = (system, code)
            if key in entries:
                duplicates += 1
            entries[key] = name
    if duplicates:
        log.warning("%s: %d duplicate vocabulary rows (last occurrence kept)", path, duplicates)
    return CodeNameMap(entries=entries, fallback_policy=fallback_policy, duplicate_count=duplicates)


SKIP_MARKER = ""


def map_code(name_map: CodeNameMap, code: MedicalCode) -> str:
    """Resolve a code to its display name, or apply the fallback policy."""
    name = name_map.entries.get(_vocab_key(code))
    if name is not None:
        return name
    policy = name_map.fallback_policy
    if policy is FallbackPolicy.RAW_CODE:
        return f"code {code.system.value}:{code.code}"
    if policy is FallbackPolicy.SKIP:
        return SKIP_MARKER
    raise VocabError(f"no vocabulary entry for {code.system.value}:{code.code}")


@dataclass
class PhenotypeMap:
    """Grouping of diagnosis codes into phenotype identifiers."""

    entries: dict[VocabKey, str] = field(default_factory=dict)

    def phenotype_of(self, code: MedicalCode) -> str | None:
        return self.entries.get(_vocab_key(code))


def load_phenotype_map(path: str | Path) -> PhenotypeMap:
    entries: dict[VocabKey, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or not parts[2]:
                raise VocabError(f"{path}: line {lineno}: expected system<TAB>code<TAB>phenotype_id")
            entries[(parts[0], parts[1])] = parts[2]
    return PhenotypeMap(entries=entries)


def phenotype_label(pheno: PhenotypeMap, visit: Visit, phenotype_id: str) -> str:
    """Positive iff any diagnosis code of the visit maps to the phenotype."""
    for code in visit.codes:
        if code.category is CodeCategory.DIAGNOSIS and pheno.phenotype_of(code) == phenotype_id:
            return POSITIVE
    return NEGATIVE
