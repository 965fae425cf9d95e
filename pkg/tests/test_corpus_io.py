import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinaudit.corpus_io import (
    Corpus,
    DuplicateNoteIdError,
    MalformedLineError,
    Note,
    PatientSplitViolation,
    PhiSpan,
    SpanOutOfBoundsError,
    UnknownNoteIdError,
    load_corpus,
    load_split,
    write_corpus,
    write_split,
)
from clinaudit.fixture import make_fixture


def _line(**kw):
    base = {"note_id": "n1", "patient_id": "p1", "text": "abc"}
    base.update(kw)
    return json.dumps(base)


def test_roundtrip(tmp_path):
    corpus, split = make_fixture(30, 2, 1)
    write_corpus(corpus, tmp_path / "c.jsonl")
    write_split(split, tmp_path / "s.json")
    again = load_corpus(tmp_path / "c.jsonl")
    assert again.notes == corpus.notes
    assert load_split(tmp_path / "s.json", again).assignment == split.assignment


def test_nulls_stay_null_and_blank_lines_skipped(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("\n" + _line(admission_year=None, quality_score=None) + "\n\n")
    (note,) = load_corpus(p).notes
    assert note.admission_year is None and note.quality_score is None


@pytest.mark.parametrize(
    "body, fragment",
    [
        ("{not json", "invalid JSON"),
        (_line(colour="red"), "unknown keys"),
        (_line(text=3), "'text'"),
        (_line(admission_year="2012"), "admission_year"),
        (_line(quality_score=1.5), "quality_score"),
        (_line(icd_codes=["A", "A"]), "duplicate icd_codes"),
        (_line(phi_spans=[{"start": 0, "end": 1, "category": "PET"}]), "PHI category"),
    ],
)
def test_malformed_lines_report_line_number(tmp_path, body, fragment):
    p = tmp_path / "c.jsonl"
    p.write_text(_line(note_id="ok") + "\n" + body + "\n")
    with pytest.raises(MalformedLineError, match=fragment) as exc:
        load_corpus(p)
    assert exc.value.line_no == 2


def test_duplicate_note_id(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(_line() + "\n" + _line() + "\n")
    with pytest.raises(DuplicateNoteIdError) as exc:
        load_corpus(p)
    assert exc.value.line_no == 2


def test_span_out_of_bounds(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(_line(phi_spans=[{"start": 1, "end": 9, "category": "NAME"}]) + "\n")
    with pytest.raises(SpanOutOfBoundsError):
        load_corpus(p)


def test_split_errors(tmp_path):
    corpus = Corpus.from_notes([Note("a", "p1", "x"), Note("b", "p1", "y"), Note("c", "p2", "z")])
    p = tmp_path / "s.json"
    p.write_text(json.dumps({"split_key": "patient", "seed": 0, "assignment": {"a": "train", "zz": "test"}}))
    with pytest.raises(UnknownNoteIdError):
        load_split(p, corpus)
    p.write_text(json.dumps({"split_key": "patient", "seed": 0, "assignment": {"a": "train", "b": "test", "c": "val"}}))
    with pytest.raises(PatientSplitViolation) as exc:
        load_split(p, corpus)
    assert set(exc.value.patients) == {"p1"}
    # the same assignment is acceptable when the split is declared note-level
    p.write_text(json.dumps({"split_key": "note", "seed": 0, "assignment": {"a": "train", "b": "test", "c": "val"}}))
    assert load_split(p, corpus).counts() == {"train": 1, "val": 1, "test": 1}


def test_split_duplicate_assignment_key(tmp_path):
    corpus = Corpus.from_notes([Note("a", "p1", "x")])
    p = tmp_path / "s.json"
    p.write_text('{"split_key": "note", "seed": 0, "assignment": {"a": "train", "a": "test"}}')
    with pytest.raises(Exception, match="more than once"):
        load_split(p, corpus)


def test_unknown_note_type_kept_raw():
    n = Note("a", "p", "x", note_type="telephone")
    assert n.note_type == "telephone" and n.note_type_class == "other"


note_st = st.builds(
    lambda i, text, year, q, codes, typ: Note(
        f"n{i}", f"p{i % 3}", text, typ, year, (PhiSpan(0, 1, "NAME"),) if text else (), tuple(sorted(set(codes))), q, "gen"
    ),
    st.integers(0, 10_000),
    st.text(max_size=40),
    st.none() | st.integers(1990, 2030),
    st.none() | st.floats(0, 1),
    st.lists(st.sampled_from(["I10", "E11", "J18"]), max_size=3),
    st.none() | st.sampled_from(["progress", "ed", "weird"]),
)


@settings(max_examples=50, deadline=None)
@given(st.lists(note_st, max_size=8, unique_by=lambda n: n.note_id))
def test_property_roundtrip(tmp_path_factory, notes):
    path = tmp_path_factory.mktemp("rt") / "c.jsonl"
    write_corpus(notes, path)
    assert load_corpus(path).notes == tuple(notes)
