"""Line-delimited note corpora and split manifests.

Corpus file: UTF-8, one JSON object per line with keys ``note_id``,
``patient_id``, ``text``, ``note_type``, ``admission_year``, ``phi_spans``
(list of ``{start, end, category}``, character offsets, end exclusive),
``icd_codes``, ``quality_score`` and ``source``.  Absent values are JSON
``null`` (or a missing key); they are never replaced by sentinel numbers.

Split manifest: one JSON object ``{split_key, seed, assignment}`` where
``assignment`` maps note_id to ``train``/``val``/``test``.
"""
from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

logger = logging.getLogger(__name__)

NOTE_TYPES = ("progress", "discharge", "radiology", "nursing", "ed", "consult")
PHI_CATEGORIES = (
    "NAME",
    "PROFESSION",
    "LOCATION",
    "AGE",
    "DATE",
    "CONTACT",
    "ID",
    "HOSPITAL",
    "DEVICE",
    "OTHER",
)
SPLITS = ("train", "val", "test")
SPLIT_KEYS = ("patient", "note")
_FIELDS = (
    "note_id",
    "patient_id",
    "text",
    "note_type",
    "admission_year",
    "phi_spans",
    "icd_codes",
    "quality_score",
    "source",
)


class CorpusError(ValueError):
    """Base class for corpus and split loading errors."""


class MalformedLineError(CorpusError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateNoteIdError(CorpusError):
    def __init__(self, note_id: str, line_no: int):
        super().__init__(f"line {line_no}: duplicate note_id {note_id!r}")
        self.note_id = note_id
        self.line_no = line_no


class SpanOutOfBoundsError(CorpusError):
    def __init__(self, note_id: str, start: int, end: int, length: int):
        super().__init__(f"note {note_id!r}: PHI span [{start}, {end}) outside text of length {length}")
        self.note_id = note_id


class UnknownNoteIdError(CorpusError):
    def __init__(self, note_ids: list[str]):
        super().__init__(f"split manifest references unknown note ids: {note_ids[:10]}")
        self.note_ids = note_ids


class PatientSplitViolation(CorpusError):
    def __init__(self, patients: dict[str, list[str]]):
        super().__init__(f"patient-keyed split places {len(patients)} patient(s) in more than one split: {sorted(patients)[:10]}")
        self.patients = patients


@dataclass(frozen=True)
class PhiSpan:
    start: int
    end: int
    category: str


@dataclass(frozen=True)
class Note:
    note_id: str
    patient_id: str
    text: str
    note_type: str | None = "progress"
    admission_year: int | None = None
    phi_spans: tuple[PhiSpan, ...] = ()
    icd_codes: tuple[str, ...] = ()
    quality_score: float | None = None
    source: str = ""

    @property
    def note_type_class(self) -> str | None:
        """Known note type, ``"other"`` for the long tail, None when absent."""
        if self.note_type is None:
            return None
        return self.note_type if self.note_type in NOTE_TYPES else "other"

    def to_dict(self) -> dict:
        return {
            "note_id": self.note_id,
            "patient_id": self.patient_id,
            "text": self.text,
            "note_type": self.note_type,
            "admission_year": self.admission_year,
            "phi_spans": [{"start": s.start, "end": s.end, "category": s.category} for s in self.phi_spans],
            "icd_codes": list(self.icd_codes),
            "quality_score": self.quality_score,
            "source": self.source,
        }


@dataclass(frozen=True)
class Corpus:
    notes: tuple[Note, ...]
    by_id: Mapping[str, Note] = field(repr=False, compare=False)
    by_patient: Mapping[str, tuple[str, ...]] = field(repr=False, compare=False)

    @classmethod
    def from_notes(cls, notes: Iterable[Note]) -> "Corpus":
        notes = tuple(notes)
        by_id: dict[str, Note] = {}
        by_patient: dict[str, list[str]] = defaultdict(list)
        for i, note in enumerate(notes, start=1):
            if note.note_id in by_id:
                raise DuplicateNoteIdError(note.note_id, i)
            _check_note(note)
            by_id[note.note_id] = note
            by_patient[note.patient_id].append(note.note_id)
        return cls(
            notes=notes,
            by_id=MappingProxyType(by_id),
            by_patient=MappingProxyType({p: tuple(ids) for p, ids in by_patient.items()}),
        )

    def __len__(self) -> int:
        return len(self.notes)

    def __iter__(self):
        return iter(self.notes)


@dataclass(frozen=True)
class SplitManifest:
    split_key: str
    seed: int
    assignment: Mapping[str, str]

    def ids(self, split: str) -> list[str]:
        return sorted(nid for nid, s in self.assignment.items() if s == split)

    def counts(self) -> dict[str, int]:
        out = {s: 0 for s in SPLITS}
        for s in self.assignment.values():
            out[s] += 1
        return out

    def to_dict(self) -> dict:
        return {"split_key": self.split_key, "seed": self.seed, "assignment": dict(sorted(self.assignment.items()))}


def _check_note(note: Note) -> None:
    n = len(note.text)
    for span in note.phi_spans:
        if not (0 <= span.start < span.end <= n):
            raise SpanOutOfBoundsError(note.note_id, span.start, span.end, n)


def _parse_note(obj: object, line_no: int) -> Note:
    if not isinstance(obj, dict):
        raise MalformedLineError(line_no, "record is not a JSON object")
    unknown = set(obj) - set(_FIELDS)
    if unknown:
        raise MalformedLineError(line_no, f"unknown keys {sorted(unknown)}")
    for key in ("note_id", "patient_id", "text"):
        if not isinstance(obj.get(key), str):
            raise MalformedLineError(line_no, f"{key!r} must be a string")
    note_id = obj["note_id"]
    note_type = obj.get("note_type")
    if note_type is not None and not isinstance(note_type, str):
        raise MalformedLineError(line_no, "'note_type' must be a string or null")
    year = obj.get("admission_year")
    if year is not None and (isinstance(year, bool) or not isinstance(year, int)):
        raise MalformedLineError(line_no, "'admission_year' must be an integer or null")
    q = obj.get("quality_score")
    if q is not None:
        if isinstance(q, bool) or not isinstance(q, (int, float)) or not 0.0 <= q <= 1.0:
            raise MalformedLineError(line_no, "'quality_score' must be a number in [0, 1] or null")
        q = float(q)
    codes = obj.get("icd_codes") or []
    if not isinstance(codes, list) or not all(isinstance(c, str) for c in codes):
        raise MalformedLineError(line_no, "'icd_codes' must be a list of strings")
    if len(set(codes)) != len(codes):
        raise MalformedLineError(line_no, f"duplicate icd_codes in note {note_id!r}")
    spans = []
    for raw in obj.get("phi_spans") or []:
        try:
            start, end, cat = raw["start"], raw["end"], raw["category"]
        except (TypeError, KeyError):
            raise MalformedLineError(line_no, "phi span needs start, end, category") from None
        if not isinstance(start, int) or not isinstance(end, int):
            raise MalformedLineError(line_no, "phi span offsets must be integers")
        if cat not in PHI_CATEGORIES:
            raise MalformedLineError(line_no, f"unknown PHI category {cat!r}")
        spans.append(PhiSpan(start, end, cat))
    source = obj.get("source") or ""
    if not isinstance(source, str):
        raise MalformedLineError(line_no, "'source' must be a string")
    note = Note(
        note_id=note_id,
        patient_id=obj["patient_id"],
        text=obj["text"],
        note_type=note_type,
        admission_year=year,
        phi_spans=tuple(spans),
        icd_codes=tuple(codes),
        quality_score=q,
        source=source,
    )
    _check_note(note)
    return note


def load_corpus(path: str | Path) -> Corpus:
    """Read a line-delimited corpus file; blank lines are skipped."""
    notes: list[Note] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLineError(line_no, f"invalid JSON ({exc.msg})") from None
            note = _parse_note(obj, line_no)
            if note.note_id in seen:
                raise DuplicateNoteIdError(note.note_id, line_no)
            seen.add(note.note_id)
            notes.append(note)
    logger.info("loaded %d notes from %s", len(notes), path)
    return Corpus.from_notes(notes)


def write_corpus(corpus: Corpus | Iterable[Note], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for note in corpus:
            fh.write(json.dumps(note.to_dict(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def patient_split_violations(corpus: Corpus, assignment: Mapping[str, str]) -> dict[str, list[str]]:
    """Patients whose assigned notes land in more than one split."""
    bad: dict[str, list[str]] = {}
    for patient, note_ids in corpus.by_patient.items():
        assigned = [nid for nid in note_ids if nid in assignment]
        if len({assignment[nid] for nid in assigned}) > 1:
            bad[patient] = sorted(assigned)
    return dict(sorted(bad.items()))


def parse_split(obj: object, corpus: Corpus) -> SplitManifest:
    if not isinstance(obj, dict):
        raise CorpusError("split manifest must be a JSON object")
    split_key = obj.get("split_key")
    if split_key not in SPLIT_KEYS:
        raise CorpusError(f"split_key must be one of {SPLIT_KEYS}, got {split_key!r}")
    seed = obj.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise CorpusError("seed must be an integer")
    assignment = obj.get("assignment")
    if not isinstance(assignment, dict):
        raise CorpusError("assignment must be an object mapping note_id to split")
    bad_values = sorted(k for k, v in assignment.items() if v not in SPLITS)
    if bad_values:
        raise CorpusError(f"invalid split names for notes {bad_values[:10]}")
    unknown = sorted(nid for nid in assignment if nid not in corpus.by_id)
    if unknown:
        raise UnknownNoteIdError(unknown)
    if split_key == "patient":
        bad = patient_split_violations(corpus, assignment)
        if bad:
            raise PatientSplitViolation(bad)
    return SplitManifest(split_key=split_key, seed=seed, assignment=MappingProxyType(dict(assignment)))


def load_split(path: str | Path, corpus: Corpus) -> SplitManifest:
    # object_pairs_hook catches a note_id listed twice in the assignment
    def _pairs(pairs):
        keys = [k for k, _ in pairs]
        if len(keys) != len(set(keys)):
            dupes = sorted({k for k in keys if keys.count(k) > 1})
            raise CorpusError(f"note ids assigned more than once: {dupes[:10]}")
        return dict(pairs)

    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"), object_pairs_hook=_pairs)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
    return parse_split(obj, corpus)


def write_split(split: SplitManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(split.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
