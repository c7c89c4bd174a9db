"""Render coded visits as natural-language narratives.

The layout is intentionally plain and fully configurable: three sections
(one per code category) in template order, with code names sorted
lexicographically inside each section so the text is a deterministic
function of the visit regardless of ingestion order. An empty category
renders an explicit "none recorded" clause rather than disappearing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .core import CodeCategory, CohortExample, Narrative, Visit
from .errors import FormatError
from .vocab import SKIP_MARKER, CodeNameMap, map_code

DEFAULT_SECTION_ORDER = (CodeCategory.DIAGNOSIS, CodeCategory.MEDICATION, CodeCategory.PROCEDURE)
DEFAULT_SECTION_HEADERS = ("Diagnoses", "Medications", "Procedures")


@dataclass(frozen=True)
class NarrativeTemplate:
    """Section layout for visit narration.

    `section_headers` aligns index-for-index with `section_order`.
    """

    section_order: tuple[CodeCategory, ...] = DEFAULT_SECTION_ORDER
    section_headers: tuple[str, ...] = DEFAULT_SECTION_HEADERS
    list_conjunctive: str = ", and "
    empty_section_text: str = "none recorded"

    def __post_init__(self):
        order = tuple(CodeCategory(c) for c in self.section_order)
        object.__setattr__(self, "section_order", order)
        object.__setattr__(self, "section_headers", tuple(self.section_headers))
        if sorted(c.value for c in order) != sorted(c.value for c in CodeCategory):
            raise ValueError("section_order must cover diagnosis, medication, and procedure exactly once")
        if len(self.section_headers) != len(order):
            raise ValueError("section_headers must align with section_order")


def load_template(path: str | Path) -> NarrativeTemplate:
    """Load a template from a JSON file with the dataclass's field names."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    try:
        return NarrativeTemplate(
            section_order=tuple(raw.get("section_order", [c.value for c in DEFAULT_SECTION_ORDER])),
            section_headers=tuple(raw.get("section_headers", DEFAULT_SECTION_HEADERS)),
            list_conjunctive=raw.get("list_conjunctive", ", and "),
            empty_section_text=raw.get("empty_section_text", "none recorded"),
        )
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def visit_text(visit: Visit, name_map: CodeNameMap, template: NarrativeTemplate | None = None) -> str:
    """Narrative text for one visit. Deterministic function of its inputs."""
    template = template or NarrativeTemplate()
    sections = []
    for category, header in zip(template.section_order, template.section_headers):
        names = [map_code(name_map, code) for code in visit.codes_in_category(category)]
        names = sorted(n for n in names if n != SKIP_MARKER)
        body = template.list_conjunctive.join(names) if names else template.empty_section_text
        sections.append(f"{header}: {body}.")
    return " ".join(sections)


def serialize_narrative(visit: Visit, name_map: CodeNameMap, template: NarrativeTemplate | None = None) -> Narrative:
    """Narrate a bare visit, keyed by its visit_id."""
    return Narrative(example_id=visit.visit_id, text=visit_text(visit, name_map, template))


def narrate_examples(
    examples: Iterable[CohortExample],
    name_map: CodeNameMap,
    template: NarrativeTemplate | None = None,
) -> dict[str, Narrative]:
    """Narrate each example's input visit, keyed by example_id."""
    out: dict[str, Narrative] = {}
    for ex in examples:
        out[ex.example_id] = Narrative(example_id=ex.example_id, text=visit_text(ex.input_visit, name_map, template))
    return out


def narratives_by_id(narratives: Iterable[Narrative]) -> Mapping[str, Narrative]:
    return {n.example_id: n for n in narratives}
