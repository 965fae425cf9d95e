"""Deterministic synthetic note corpora with plantable defects.

Every planted quantity is allocated by exact quota (largest remainder) and
then shuffled, so knob values translate into exact counts instead of
binomial draws.  Background text is lowercase pseudo-words of five or more
letters and never matches a PHI pattern; residual PHI is planted only
through ``phi_risk``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus_io import NOTE_TYPES, Corpus, Note, PhiSpan, SplitManifest

# share of each note type in generated corpora
NOTE_TYPE_MIX = {"progress": 0.34, "discharge": 0.16, "radiology": 0.18, "nursing": 0.17, "ed": 0.09, "consult": 0.06}
# distribution of planted risk levels reproducing mean 0.11 and 0.40% at risk >= 3
REFERENCE_PHI_RISK = {1: 0.08, 2: 0.009, 3: 0.004}

_ONSETS = ("b", "br", "c", "ch", "d", "f", "g", "gr", "k", "l", "m", "n", "p", "pl", "r", "s", "st", "t", "tr", "v", "z")
_VOWELS = ("a", "e", "i", "o", "u", "ai", "ea", "io")
_CODAS = ("", "l", "n", "r", "s", "x", "nd", "rt")
_N_CODES = 50


@dataclass(frozen=True)
class FixtureKnobs:
    """Defects and distribution shapes planted by :func:`make_fixture`."""

    duplicate_across_splits: int = 0
    patient_overlap: int = 0
    near_dup_similarities: Sequence[float] = ()
    icd_empty_frac: float = 0.0
    icd_shift: float = 0.0
    quality_missing_frac: float = 0.0
    year_missing_frac: float = 0.0
    note_type_missing_frac: float = 0.0
    phi_risk: Mapping[int, float] = field(default_factory=dict)
    years: Sequence[int] = tuple(range(2010, 2020))
    split_ratios: Sequence[float] = (0.70, 0.15, 0.15)
    min_tokens: int = 40
    max_tokens: int = 160
    vocab_size: int = 4000


def quota(n: int, probs: Sequence[float]) -> np.ndarray:
    """Integer counts summing to ``n`` closest to ``n * probs`` (largest remainder)."""
    p = np.asarray(probs, dtype=float)
    p = p / p.sum()
    raw = n * p
    counts = np.floor(raw).astype(np.int64)
    short = n - int(counts.sum())
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _labels(n: int, values: Sequence, probs: Sequence[float], rng: np.random.Generator) -> list:
    out = []
    for v, c in zip(values, quota(n, probs)):
        out.extend([v] * int(c))
    order = rng.permutation(n)
    return [out[i] for i in order]


def _vocab(rng: np.random.Generator, size: int) -> list[str]:
    words: set[str] = set()
    out: list[str] = []
    while len(out) < size:
        n_syl = int(rng.integers(2, 4))
        w = "".join(
            _ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))] + _CODAS[rng.integers(len(_CODAS))]
            for _ in range(n_syl)
        )
        if len(w) >= 5 and w not in words:
            words.add(w)
            out.append(w)
    return out


def _code_probs(t: int, shift: float) -> np.ndarray:
    ranks = np.arange(1, _N_CODES + 1, dtype=float)
    base = 1.0 / ranks
    base /= base.sum()
    w = min(1.0, t * shift)
    return (1.0 - w) * base + w * base[::-1]


_FIRST = ("Alvarez", "Brennan", "Castillo", "Dawson", "Eriksen", "Fairley", "Garrison", "Holloway")
_TOWNS = ("Springfield", "Riverton", "Lakewood", "Fairview", "Brookhaven", "Maplewood")
_HOSP = ("Mercy General Hospital", "Saint Anne Medical Center", "Northside Community Hospital", "Valley Regional Hospital")
_JOBS = ("teacher", "electrician", "welder", "carpenter", "pharmacist", "farmer")
PLANTABLE = ("DATE", "PHONE", "EMAIL", "ID", "NAME", "AGE", "LOCATION", "HOSPITAL", "DEVICE", "PROFESSION")
_SPAN_CATEGORY = {"PHONE": "CONTACT", "EMAIL": "CONTACT"}


def phi_fragment(category: str, rng: np.random.Generator) -> str:
    """A short text fragment the default pattern set detects as ``category``."""
    r = lambda lo, hi: int(rng.integers(lo, hi))  # noqa: E731
    if category == "DATE":
        return f"{r(1, 13):02d}/{r(1, 29):02d}/{r(2005, 2020)}"
    if category == "PHONE":
        return f"{r(200, 999)}-{r(200, 999)}-{r(1000, 9999)}"
    if category == "EMAIL":
        return f"{_FIRST[r(0, len(_FIRST))].lower()}{r(1, 99)}@mailhost.org"
    if category == "ID":
        return f"MRN {r(10_000_000, 99_999_999)}"
    if category == "NAME":
        return f"Dr. {_FIRST[r(0, len(_FIRST))]}"
    if category == "AGE":
        return f"{r(18, 99)}-year-old"
    if category == "LOCATION":
        return f"lives in {_TOWNS[r(0, len(_TOWNS))]}"
    if category == "HOSPITAL":
        return _HOSP[r(0, len(_HOSP))]
    if category == "DEVICE":
        return f"serial SN-{r(1000, 9999)}-AX{r(10, 99)}"
    if category == "PROFESSION":
        return f"works as a {_JOBS[r(0, len(_JOBS))]}"
    raise ValueError(f"no fragment generator for {category!r}")


def _render(words: list[str], fragments: list[tuple[str, str]], rng: np.random.Generator) -> tuple[str, tuple[PhiSpan, ...]]:
    if not fragments:
        return " ".join(words), ()
    slots = sorted(rng.choice(len(words) + 1, size=len(fragments), replace=True).tolist())
    pieces: list[str] = []
    spans: list[PhiSpan] = []
    pos = 0
    fi = 0
    for i in range(len(words) + 1):
        while fi < len(fragments) and slots[fi] == i:
            cat, frag = fragments[fi]
            if pieces:
                pos += 1
            spans.append(PhiSpan(pos, pos + len(frag), _SPAN_CATEGORY.get(cat, cat)))
            pieces.append(frag)
            pos += len(frag)
            fi += 1
        if i < len(words):
            if pieces:
                pos += 1
            pieces.append(words[i])
            pos += len(words[i])
    return " ".join(pieces), tuple(spans)


def make_fixture(
    n_patients: int,
    notes_per_patient: int,
    seed: int,
    knobs: FixtureKnobs | None = None,
) -> tuple[Corpus, SplitManifest]:
    """Build a corpus and a split manifest; identical inputs give identical output."""
    knobs = knobs or FixtureKnobs()
    if n_patients < 1 or notes_per_patient < 1:
        raise ValueError("n_patients and notes_per_patient must be >= 1")
    if knobs.min_tokens < 1 or knobs.max_tokens < knobs.min_tokens:
        raise ValueError("need 1 <= min_tokens <= max_tokens")
    rng = np.random.default_rng(seed)
    n = n_patients * notes_per_patient
    vocab = _vocab(rng, knobs.vocab_size)

    patients = [f"p{i:05d}" for i in range(n_patients)]
    note_ids = [f"n{i:06d}" for i in range(n)]
    owner = [patients[i // notes_per_patient] for i in range(n)]

    patient_split = dict(zip(patients, _labels(n_patients, ("train", "val", "test"), knobs.split_ratios, rng)))
    assignment = {nid: patient_split[p] for nid, p in zip(note_ids, owner)}
    split_key = "patient"

    if knobs.patient_overlap:
        if notes_per_patient < 2:
            raise ValueError("patient_overlap needs notes_per_patient >= 2")
        train_pat = [p for p in patients if patient_split[p] == "train"]
        if knobs.patient_overlap > len(train_pat):
            raise ValueError("not enough train patients to plant overlaps")
        for p in sorted(rng.choice(train_pat, size=knobs.patient_overlap, replace=False).tolist()):
            first = patients.index(p) * notes_per_patient
            assignment[note_ids[first]] = "test"
        split_key = "note"

    lengths = rng.integers(knobs.min_tokens, knobs.max_tokens + 1, size=n)
    words = [[vocab[j] for j in rng.choice(len(vocab), size=int(m), replace=False)] for m in lengths]

    train_ids = [i for i in range(n) if assignment[note_ids[i]] == "train"]
    test_ids = [i for i in range(n) if assignment[note_ids[i]] == "test"]
    n_roles = knobs.duplicate_across_splits + len(knobs.near_dup_similarities)
    if n_roles > len(test_ids) or n_roles > len(train_ids):
        raise ValueError("more planted duplicates than test or train notes")
    role_test = rng.choice(test_ids, size=n_roles, replace=False).tolist() if n_roles else []
    role_train = rng.choice(train_ids, size=n_roles, replace=False).tolist() if n_roles else []
    dup_pairs = list(zip(role_test[: knobs.duplicate_across_splits], role_train[: knobs.duplicate_across_splits]))
    near_pairs = list(zip(role_test[knobs.duplicate_across_splits :], role_train[knobs.duplicate_across_splits :]))

    # novel tokens carry a "qz" suffix, which no syllable in the vocabulary produces
    fresh = (f"{vocab[j % len(vocab)]}qz{j // len(vocab) or ''}" for j in range(10**9))
    for (ti, ri), target in zip(near_pairs, knobs.near_dup_similarities):
        if not 0.0 < target <= 1.0:
            raise ValueError("near-duplicate similarities must lie in (0, 1]")
        base = list(words[ri])
        m = len(base)
        # replacing r distinct tokens by r novel ones gives Jaccard (m - r) / (m + r)
        r = int(round(m * (1.0 - target) / (1.0 + target)))
        positions = set(rng.choice(m, size=r, replace=False).tolist())
        out = [next(fresh) if j in positions else w for j, w in enumerate(base)]
        words[ti] = out

    # PHI quota is over the whole corpus but placed on notes with no planted role
    reserved = set(role_test) | set(role_train)
    risk_of = [0] * n
    if knobs.phi_risk:
        levels = sorted(knobs.phi_risk)
        if any(not 0 <= lv <= len(PLANTABLE) for lv in levels):
            raise ValueError("phi_risk levels must be between 0 and 10")
        probs = [knobs.phi_risk[lv] for lv in levels]
        if sum(probs) > 1.0 + 1e-12:
            raise ValueError("phi_risk probabilities sum above 1")
        counts = quota(n, probs + [max(0.0, 1.0 - sum(probs))])[:-1]
        eligible = [i for i in range(n) if i not in reserved]
        if int(counts.sum()) > len(eligible):
            raise ValueError("not enough unreserved notes for the PHI risk quota")
        chosen = rng.permutation(eligible)
        k = 0
        for lv, c in zip(levels, counts):
            for i in chosen[k : k + int(c)]:
                risk_of[int(i)] = lv
            k += int(c)

    note_types = _labels(n, NOTE_TYPES, [NOTE_TYPE_MIX[t] for t in NOTE_TYPES], rng)
    years = _labels(n, list(knobs.years), [1.0] * len(knobs.years), rng)
    icd_empty = _labels(n, (True, False), (knobs.icd_empty_frac, 1.0 - knobs.icd_empty_frac), rng)
    q_missing = _labels(n, (True, False), (knobs.quality_missing_frac, 1.0 - knobs.quality_missing_frac), rng)
    y_missing = _labels(n, (True, False), (knobs.year_missing_frac, 1.0 - knobs.year_missing_frac), rng)
    t_missing = _labels(n, (True, False), (knobs.note_type_missing_frac, 1.0 - knobs.note_type_missing_frac), rng)

    codes: list[tuple[str, ...]] = [()] * n
    for t, year in enumerate(knobs.years):
        members = [i for i in range(n) if years[i] == year and not icd_empty[i]]
        labels = _labels(len(members), [f"C{c:02d}" for c in range(_N_CODES)], _code_probs(t, knobs.icd_shift), rng)
        for i, code in zip(members, labels):
            codes[i] = (code,)

    quality = np.clip(rng.normal(0.94, 0.03, size=n), 0.0, 1.0)
    texts: list[str] = [""] * n
    spans: list[tuple[PhiSpan, ...]] = [()] * n
    for i in range(n):
        cats = rng.choice(len(PLANTABLE), size=risk_of[i], replace=False) if risk_of[i] else []
        frags = [(PLANTABLE[c], phi_fragment(PLANTABLE[c], rng)) for c in sorted(cats)]
        texts[i], spans[i] = _render(words[i], frags, rng)
    for ti, ri in dup_pairs:
        texts[ti], spans[ti] = texts[ri], spans[ri]

    notes = [
        Note(
            note_id=note_ids[i],
            patient_id=owner[i],
            text=texts[i],
            note_type=None if t_missing[i] else note_types[i],
            admission_year=None if y_missing[i] else int(years[i]),
            phi_spans=spans[i],
            icd_codes=codes[i],
            quality_score=None if q_missing[i] else round(float(quality[i]), 4),
            source="fixture-generator",
        )
        for i in range(n)
    ]
    corpus = Corpus.from_notes(notes)
    split = SplitManifest(split_key=split_key, seed=seed, assignment=assignment)
    return corpus, split
