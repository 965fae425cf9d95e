"""Datasheet and model-card field schemas, document parsing and completeness.

A document is JSON shaped as::

    {"doc_kind": "datasheet", "version": "v3",
     "sections": {"<section_id>": {"<field_id>": {"content": ..., "version_stamp": "..."}}}}

A field counts as populated only when its content is a valid non-empty value
of the field's kind *and* it carries a non-empty version stamp.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .hashing import canonical_hash, canonical_json, sha256_bytes

TIERS = ("mandatory", "recommended", "optional")
VALUE_KINDS = ("text", "enum_choice", "number", "reference", "boolean")
SECTIONS = {
    "datasheet": (
        "motivation",
        "composition",
        "collection",
        "deid_privacy",
        "labeling",
        "missingness_quality",
        "splits_leakage",
        "maintenance",
    ),
    "card": ("overview", "intended_use", "training_data", "evaluation", "limitations", "governance", "ethics_safety"),
}
DEFAULT_DRIFT_GROUPS = {"privacy": ("deid_privacy",), "splits": ("splits_leakage",)}


class SchemaError(ValueError):
    pass


class DocSyntaxError(ValueError):
    def __init__(self, path: str, line: int, column: int, msg: str):
        super().__init__(f"{path}:{line}:{column}: {msg}")
        self.line = line
        self.column = column


class DocStructureError(ValueError):
    pass


class ValueKindError(ValueError):
    def __init__(self, section: str, field_id: str, expected: str, got: Any):
        super().__init__(f"{section}.{field_id}: expected {expected} content, got {type(got).__name__}")
        self.section = section
        self.field_id = field_id


@dataclass(frozen=True)
class FieldSpec:
    section_id: str
    field_id: str
    tier: str
    value_kind: str = "text"
    choices: tuple[str, ...] = ()

    @property
    def key(self) -> tuple[str, str]:
        return (self.section_id, self.field_id)


@dataclass(frozen=True)
class Schema:
    doc_kind: str
    schema_version: str
    fields: tuple[FieldSpec, ...]
    note: str = ""

    def __post_init__(self):
        if self.doc_kind not in SECTIONS:
            raise SchemaError(f"unknown doc_kind {self.doc_kind!r}")
        allowed = SECTIONS[self.doc_kind]
        seen = set()
        for spec in self.fields:
            if spec.section_id not in allowed:
                raise SchemaError(f"section {spec.section_id!r} not valid for {self.doc_kind}")
            if spec.tier not in TIERS:
                raise SchemaError(f"{spec.section_id}.{spec.field_id}: bad tier {spec.tier!r}")
            if spec.value_kind not in VALUE_KINDS:
                raise SchemaError(f"{spec.section_id}.{spec.field_id}: bad kind {spec.value_kind!r}")
            if spec.value_kind == "enum_choice" and not spec.choices:
                raise SchemaError(f"{spec.section_id}.{spec.field_id}: enum_choice needs choices")
            if spec.key in seen:
                raise SchemaError(f"duplicate field {spec.section_id}.{spec.field_id}")
            seen.add(spec.key)
        sections_with_mandatory = {s.section_id for s in self.fields if s.tier == "mandatory"}
        for sec in {s.section_id for s in self.fields}:
            if sec not in sections_with_mandatory:
                raise SchemaError(f"section {sec!r} has no mandatory field")
        if not sections_with_mandatory:
            raise SchemaError("schema has no mandatory fields")

    @property
    def by_key(self) -> dict[tuple[str, str], FieldSpec]:
        return {s.key: s for s in self.fields}

    @property
    def mandatory(self) -> tuple[FieldSpec, ...]:
        return tuple(s for s in self.fields if s.tier == "mandatory")

    @property
    def sections(self) -> tuple[str, ...]:
        present = {s.section_id for s in self.fields}
        return tuple(s for s in SECTIONS[self.doc_kind] if s in present)

    def to_dict(self) -> dict:
        fields = []
        for s in self.fields:
            d = {"section": s.section_id, "field": s.field_id, "tier": s.tier, "kind": s.value_kind}
            if s.choices:
                d["choices"] = list(s.choices)
            fields.append(d)
        return {"doc_kind": self.doc_kind, "schema_version": self.schema_version, "note": self.note, "fields": fields}

    @property
    def hash(self) -> str:
        return canonical_hash(self.to_dict())

    @classmethod
    def from_dict(cls, obj: Mapping) -> "Schema":
        try:
            fields = tuple(
                FieldSpec(
                    section_id=f["section"],
                    field_id=f["field"],
                    tier=f.get("tier", "mandatory"),
                    value_kind=f.get("kind", "text"),
                    choices=tuple(f.get("choices", ())),
                )
                for f in obj["fields"]
            )
            return cls(doc_kind=obj["doc_kind"], schema_version=str(obj.get("schema_version", "0")), fields=fields, note=obj.get("note", ""))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from None


def load_schema(path: str | Path) -> Schema:
    return Schema.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def default_schema(doc_kind: str) -> Schema:
    name = {"datasheet": "datasheet_schema.json", "card": "card_schema.json"}[doc_kind]
    text = resources.files("clinaudit.data").joinpath(name).read_text(encoding="utf-8")
    return Schema.from_dict(json.loads(text))


@dataclass(frozen=True)
class FieldValue:
    content: Any
    version_stamp: str | None = None


@dataclass(frozen=True)
class ArtifactDoc:
    doc_kind: str
    version: str
    values: Mapping[tuple[str, str], FieldValue]
    checksum: str
    warnings: tuple[str, ...] = ()


def _check_kind(spec: FieldSpec, content: Any) -> None:
    if content is None or content == "":
        return
    kind = spec.value_kind
    ok = {
        "text": isinstance(content, str),
        "enum_choice": isinstance(content, str),
        "number": isinstance(content, (int, float)) and not isinstance(content, bool),
        "boolean": isinstance(content, bool),
        "reference": isinstance(content, str) or (isinstance(content, list) and all(isinstance(x, str) for x in content)),
    }[kind]
    if not ok:
        raise ValueKindError(spec.section_id, spec.field_id, kind, content)


def is_populated(spec: FieldSpec, value: FieldValue | None) -> bool:
    if value is None or not isinstance(value.version_stamp, str) or not value.version_stamp.strip():
        return False
    c = value.content
    kind = spec.value_kind
    if kind == "text":
        return isinstance(c, str) and bool(c.strip())
    if kind == "enum_choice":
        return c in spec.choices
    if kind == "number":
        return isinstance(c, (int, float)) and not isinstance(c, bool) and math.isfinite(c)
    if kind == "boolean":
        return isinstance(c, bool)
    if isinstance(c, str):
        return bool(c.strip())
    return isinstance(c, list) and bool(c) and all(isinstance(x, str) and x.strip() for x in c)


def parse_doc_obj(obj: Any, schema: Schema, origin: str = "<document>") -> ArtifactDoc:
    if not isinstance(obj, dict) or not isinstance(obj.get("sections"), dict):
        raise DocStructureError(f"{origin}: expected an object with a 'sections' mapping")
    kind = obj.get("doc_kind")
    if kind != schema.doc_kind:
        raise DocStructureError(f"{origin}: doc_kind {kind!r} does not match schema {schema.doc_kind!r}")
    specs = schema.by_key
    values: dict[tuple[str, str], FieldValue] = {}
    warnings: list[str] = []
    for section, fields in obj["sections"].items():
        if not isinstance(fields, dict):
            raise DocStructureError(f"{origin}: section {section!r} must be an object")
        for field_id, raw in fields.items():
            key = (section, field_id)
            if key not in specs:
                warnings.append(f"unknown field {section}.{field_id}")
                continue
            if not isinstance(raw, dict):
                raise DocStructureError(f"{origin}: field {section}.{field_id} must be an object with content/version_stamp")
            spec = specs[key]
            content = raw.get("content")
            _check_kind(spec, content)
            if spec.value_kind == "enum_choice" and content not in (None, "") and content not in spec.choices:
                warnings.append(f"{section}.{field_id}: {content!r} is not one of {list(spec.choices)}")
            stamp = raw.get("version_stamp")
            values[key] = FieldValue(content=content, version_stamp=stamp if isinstance(stamp, str) else None)
    return ArtifactDoc(
        doc_kind=kind,
        version=str(obj.get("version", "")),
        values=values,
        checksum=sha256_bytes(canonical_json(obj)),
        warnings=tuple(warnings),
    )


def parse_doc(path: str | Path, schema: Schema) -> ArtifactDoc:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocSyntaxError(str(path), exc.lineno, exc.colno, exc.msg) from None
    return parse_doc_obj(obj, schema, origin=str(path))


@dataclass(frozen=True)
class CompletenessReport:
    exact: Fraction
    missing_mandatory: tuple[tuple[str, str], ...]
    per_section: Mapping[str, Fraction]
    n_mandatory: int
    n_populated: int
    informational: Mapping[str, Fraction] = field(default_factory=dict)

    @property
    def C(self) -> float:
        return float(self.exact)

    def render(self) -> str:
        return f"{float(self.exact):.4f}"

    def to_dict(self) -> dict:
        return {
            "C": self.C,
            "C_rendered": self.render(),
            "n_mandatory": self.n_mandatory,
            "n_populated": self.n_populated,
            "missing_mandatory": [f"{s}.{f}" for s, f in self.missing_mandatory],
            "per_section": {k: float(v) for k, v in self.per_section.items()},
            "informational": {k: float(v) for k, v in self.informational.items()},
        }


def completeness(doc: ArtifactDoc, schema: Schema) -> CompletenessReport:
    """Share of mandatory fields populated, plus the explicit missing list."""
    mandatory = schema.mandatory
    missing = []
    sec_tot: dict[str, int] = {}
    sec_pop: dict[str, int] = {}
    for spec in mandatory:
        sec_tot[spec.section_id] = sec_tot.get(spec.section_id, 0) + 1
        if is_populated(spec, doc.values.get(spec.key)):
            sec_pop[spec.section_id] = sec_pop.get(spec.section_id, 0) + 1
        else:
            missing.append(spec.key)
    populated = len(mandatory) - len(missing)
    info = {}
    for tier in ("recommended", "optional"):
        specs = [s for s in schema.fields if s.tier == tier]
        if specs:
            info[tier] = Fraction(sum(is_populated(s, doc.values.get(s.key)) for s in specs), len(specs))
    return CompletenessReport(
        exact=Fraction(populated, len(mandatory)),
        missing_mandatory=tuple(missing),
        per_section={s: Fraction(sec_pop.get(s, 0), sec_tot[s]) for s in schema.sections if s in sec_tot},
        n_mandatory=len(mandatory),
        n_populated=populated,
        informational=info,
    )


@dataclass(frozen=True)
class DriftRow:
    version: str
    overall: Fraction
    groups: Mapping[str, Fraction]
    regression: bool


def completeness_drift(
    docs: Sequence[ArtifactDoc],
    schema: Schema,
    groups: Mapping[str, Iterable[str]] | None = None,
) -> list[DriftRow]:
    """Per-version completeness with regression flags (overall decreased vs predecessor)."""
    if not docs:
        raise ValueError("need at least one document version")
    groups = dict(DEFAULT_DRIFT_GROUPS if groups is None else groups)
    rows: list[DriftRow] = []
    for doc in docs:
        rep = completeness(doc, schema)
        gvals = {}
        for name, sections in groups.items():
            specs = [s for s in schema.mandatory if s.section_id in set(sections)]
            if not specs:
                raise SchemaError(f"drift group {name!r} has no mandatory fields")
            gvals[name] = Fraction(sum(is_populated(s, doc.values.get(s.key)) for s in specs), len(specs))
        regression = bool(rows) and rep.exact < rows[-1].overall
        rows.append(DriftRow(version=doc.version, overall=rep.exact, groups=gvals, regression=regression))
    return rows


def blank_document(schema: Schema, version: str = "v1") -> dict:
    """Skeleton document with every schema field present and empty."""
    sections: dict[str, dict] = {}
    for spec in schema.fields:
        sections.setdefault(spec.section_id, {})[spec.field_id] = {"content": None, "version_stamp": None}
    return {"doc_kind": schema.doc_kind, "version": version, "sections": sections}
