"""Corpus metric suite: missingness, annotator agreement, PSI drift, PHI risk proxy."""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Hashable, Mapping, Sequence

import numpy as np

from . import kernels
from .corpus_io import Corpus, Note
from .hashing import canonical_hash

MISSINGNESS_FIELDS = ("admission_year", "quality_score", "icd_codes", "phi_spans", "note_type")
# labels used in the ``field pct`` plot data
FIELD_LABELS = {
    "admission_year": "admissionDate",
    "phi_spans": "phiEmpty",
    "icd_codes": "icdEmpty",
    "quality_score": "qualityMissing",
    "note_type": "noteTypeMissing",
}
# note types for which a field does not exist (absence there is structural)
DEFAULT_STRUCTURE: dict[str, tuple[str, ...]] = {
    "admission_year": ("ed",),
    "icd_codes": ("nursing",),
}
PSI_EPSILON = 1e-6
LENGTH_BIN_WIDTH = 100
LENGTH_BIN_LIMIT = 2000
DEFAULT_B = 1000


# --------------------------------------------------------------------------
# missingness


def _is_missing(note: Note, name: str) -> bool:
    if name == "admission_year":
        return note.admission_year is None
    if name == "quality_score":
        return note.quality_score is None
    if name == "icd_codes":
        return len(note.icd_codes) == 0
    if name == "phi_spans":
        return len(note.phi_spans) == 0
    if name == "note_type":
        return note.note_type is None or note.note_type == ""
    raise KeyError(name)


_STRATA: dict[str, Callable[[Note], Hashable]] = {
    "note_type": lambda n: n.note_type_class or "missing",
    "admission_year": lambda n: n.admission_year if n.admission_year is not None else "missing",
    "source": lambda n: n.source or "missing",
}


@dataclass(frozen=True)
class MissingnessProfile:
    n: int
    counts: Mapping[str, int]
    structural: Mapping[str, int]
    incidental: Mapping[str, int]
    strata_n: Mapping[Hashable, int] = field(default_factory=dict)
    strata_counts: Mapping[Hashable, Mapping[str, int]] = field(default_factory=dict)

    @property
    def per_field(self) -> dict[str, float]:
        return {f: (c / self.n if self.n else 0.0) for f, c in self.counts.items()}

    def exact(self, name: str) -> Fraction:
        return Fraction(self.counts[name], self.n) if self.n else Fraction(0)

    @property
    def kind(self) -> dict[str, str]:
        return {f: "structural" if self.structural[f] > self.incidental[f] else "incidental" for f in self.counts}

    @property
    def strata(self) -> dict[Hashable, dict[str, float]]:
        return {s: {f: c / self.strata_n[s] for f, c in cs.items()} for s, cs in self.strata_counts.items()}

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "per_field": self.per_field,
            "counts": dict(self.counts),
            "structural": dict(self.structural),
            "incidental": dict(self.incidental),
            "kind": self.kind,
        }
        if self.strata_counts:
            out["strata"] = {str(s): {"n": self.strata_n[s], "per_field": r} for s, r in self.strata.items()}
        return out


def missingness(
    corpus: Corpus,
    fields: Sequence[str] = MISSINGNESS_FIELDS,
    strata_by: str | Callable[[Note], Hashable] | None = None,
    structure: Mapping[str, Sequence[str]] | None = None,
) -> MissingnessProfile:
    """m_j = share of notes where field j is missing, optionally per stratum."""
    unknown = [f for f in fields if f not in MISSINGNESS_FIELDS]
    if unknown:
        raise KeyError(f"unknown missingness field(s): {unknown}")
    structure = DEFAULT_STRUCTURE if structure is None else structure
    if isinstance(strata_by, str):
        if strata_by not in _STRATA:
            raise KeyError(f"unknown stratification key {strata_by!r}")
        strata_by = _STRATA[strata_by]
    counts = dict.fromkeys(fields, 0)
    struct = dict.fromkeys(fields, 0)
    incid = dict.fromkeys(fields, 0)
    s_n: Counter = Counter()
    s_counts: dict[Hashable, dict[str, int]] = {}
    for note in corpus:
        key = strata_by(note) if strata_by else None
        if strata_by:
            s_n[key] += 1
            s_counts.setdefault(key, dict.fromkeys(fields, 0))
        for f in fields:
            if _is_missing(note, f):
                counts[f] += 1
                if note.note_type in structure.get(f, ()):
                    struct[f] += 1
                else:
                    incid[f] += 1
                if strata_by:
                    s_counts[key][f] += 1
    order = sorted(s_counts, key=str)
    return MissingnessProfile(
        n=len(corpus),
        counts=counts,
        structural=struct,
        incidental=incid,
        strata_n={k: s_n[k] for k in order},
        strata_counts={k: s_counts[k] for k in order},
    )


# --------------------------------------------------------------------------
# agreement


class DegenerateAgreementError(ValueError):
    pass


@dataclass(frozen=True)
class AgreementResult:
    statistic: str
    value: float
    p_o: float
    p_e: float
    ci_low: float
    ci_high: float
    n_items: int
    n_raters: int
    bootstrap_B: int
    seed: int
    alpha: float = 0.05

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _bootstrap_indices(n: int, B: int, seed: int, chunk: int = 128):
    rng = np.random.Generator(np.random.PCG64(seed))
    for start in range(0, B, chunk):
        yield rng.integers(0, n, size=(min(chunk, B - start), n), dtype=np.int64)


def _percentile_ci(reps: np.ndarray, value: float, alpha: float) -> tuple[float, float]:
    lo, hi = np.percentile(reps, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    # the interval always covers the point estimate
    return min(float(lo), value), max(float(hi), value)


def cohen_kappa(
    labels_a: Sequence[Hashable],
    labels_b: Sequence[Hashable],
    B: int = DEFAULT_B,
    seed: int = 0,
    alpha: float = 0.05,
) -> AgreementResult:
    """Cohen's kappa for two raters with a percentile bootstrap CI over items."""
    n = len(labels_a)
    if n != len(labels_b):
        raise ValueError(f"label lists differ in length ({n} vs {len(labels_b)})")
    if n == 0:
        raise ValueError("need at least one item")
    cats = sorted(set(labels_a) | set(labels_b), key=lambda c: (type(c).__name__, str(c)))
    code = {c: i for i, c in enumerate(cats)}
    a = np.fromiter((code[x] for x in labels_a), dtype=np.int64, count=n)
    b = np.fromiter((code[x] for x in labels_b), dtype=np.int64, count=n)
    ca = np.bincount(a, minlength=len(cats))
    cb = np.bincount(b, minlength=len(cats))
    p_o = Fraction(int(np.count_nonzero(a == b)), n)
    p_e = Fraction(int(ca @ cb), n * n)
    if p_e == 1:
        if p_o != 1:
            raise DegenerateAgreementError("degenerate marginals: expected agreement is 1 but observed agreement is not")
        value = Fraction(1)
    else:
        value = (p_o - p_e) / (1 - p_e)
    reps = np.concatenate([kernels.bootstrap_cohen(a, b, len(cats), idx) for idx in _bootstrap_indices(n, B, seed)]) if B else np.array([float(value)])
    lo, hi = _percentile_ci(reps, float(value), alpha)
    return AgreementResult("cohen_kappa", float(value), float(p_o), float(p_e), lo, hi, n, 2, B, seed, alpha)


def fleiss_kappa(
    ratings: Sequence[Sequence[int]] | np.ndarray,
    B: int = DEFAULT_B,
    seed: int = 0,
    alpha: float = 0.05,
) -> AgreementResult:
    """Fleiss' kappa from an items x categories matrix of rater counts."""
    counts = np.asarray(ratings)
    if counts.ndim != 2 or counts.shape[0] == 0:
        raise ValueError("ratings must be a non-empty items x categories matrix")
    if not np.issubdtype(counts.dtype, np.integer):
        if not np.all(counts == np.round(counts)):
            raise ValueError("ratings must be integer rater counts")
        counts = counts.astype(np.int64)
    if (counts < 0).any():
        raise ValueError("rater counts must be non-negative")
    totals = counts.sum(axis=1)
    if not (totals == totals[0]).all():
        raise ValueError(f"ragged rater counts per item: {sorted(set(totals.tolist()))}")
    N, _ = counts.shape
    n = int(totals[0])
    if n < 2:
        raise ValueError("need at least two raters per item")
    if N < 2:
        raise DegenerateAgreementError("kappa is undefined for a single item")
    p_bar = Fraction(int((counts * counts).sum()) - N * n, N * n * (n - 1))
    col = counts.sum(axis=0)
    p_e = Fraction(int(col @ col), (N * n) ** 2)
    if p_e == 1:
        value = Fraction(1)
    else:
        value = (p_bar - p_e) / (1 - p_e)
    reps = np.concatenate([kernels.bootstrap_fleiss(counts, idx) for idx in _bootstrap_indices(N, B, seed)]) if B else np.array([float(value)])
    lo, hi = _percentile_ci(reps, float(value), alpha)
    return AgreementResult("fleiss_kappa", float(value), float(p_bar), float(p_e), lo, hi, N, n, B, seed, alpha)


# --------------------------------------------------------------------------
# PSI drift


class DriftInputError(ValueError):
    pass


def psi(baseline: Sequence[float], current: Sequence[float], eps: float = PSI_EPSILON) -> float:
    """sum_b (q_b - p_b) ln(q_b / p_b) for baseline p and current q.

    Inputs may be counts or probabilities over the same bins.  Bins empty in
    either histogram receive additive ``eps`` in both, then both are
    renormalized.
    """
    p = np.asarray(baseline, dtype=np.float64)
    q = np.asarray(current, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1 or p.size == 0:
        raise DriftInputError("histograms must be 1-d with matching bins")
    if (p < 0).any() or (q < 0).any() or p.sum() <= 0 or q.sum() <= 0:
        raise DriftInputError("histograms need non-negative mass and a positive total")
    p = p / p.sum()
    q = q / q.sum()
    zero = (p == 0) | (q == 0)
    if zero.any():
        p = p + eps * zero
        q = q + eps * zero
        p = p / p.sum()
        q = q / q.sum()
    return float(np.sum((q - p) * np.log(q / p)))


def length_bins() -> list[int]:
    """Bin midpoints for token-count histograms; the last bin is the overflow."""
    return [w + LENGTH_BIN_WIDTH // 2 for w in range(0, LENGTH_BIN_LIMIT + 1, LENGTH_BIN_WIDTH)]


def _length_bin(note: Note) -> int:
    return min(len(note.text.split()) // LENGTH_BIN_WIDTH, LENGTH_BIN_LIMIT // LENGTH_BIN_WIDTH)


def length_histogram(notes) -> list[int]:
    counts = [0] * len(length_bins())
    for note in notes:
        counts[_length_bin(note)] += 1
    return counts


def feature_counts(notes, feature: str) -> Counter:
    c: Counter = Counter()
    if feature == "icd_histogram":
        for note in notes:
            c.update(note.icd_codes)
    elif feature == "note_type_histogram":
        c.update(n.note_type_class or "missing" for n in notes)
    elif feature == "length_histogram":
        c.update(_length_bin(n) for n in notes)
    else:
        raise DriftInputError(f"unknown feature {feature!r}")
    return c


@dataclass(frozen=True)
class DriftTracePoint:
    period: Any
    psi: float


@dataclass(frozen=True)
class PsiTrace:
    feature: str
    baseline: Any
    points: tuple[DriftTracePoint, ...]
    histograms: Mapping[str, Mapping[str, int]]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "baseline": self.baseline,
            "points": [{"period": p.period, "psi": p.psi} for p in self.points],
            "histograms": {k: dict(v) for k, v in self.histograms.items()},
        }


def psi_trace(corpus: Corpus, feature: str, baseline_period: Any, periods: Sequence[Any] | None = None) -> PsiTrace:
    """PSI of each admission-year period against the baseline year."""
    by_period: dict[Any, list[Note]] = {}
    for note in corpus:
        if note.admission_year is not None:
            by_period.setdefault(note.admission_year, []).append(note)
    if not by_period:
        raise DriftInputError("feature unavailable: no note has an admission_year")
    if periods is None:
        periods = sorted(by_period)
    hists: dict[Any, Counter] = {}
    for per in [baseline_period, *periods]:
        if per not in hists:
            notes = by_period.get(per, [])
            if not notes:
                raise DriftInputError(f"period {per!r} has no notes")
            hists[per] = feature_counts(notes, feature)
            if not hists[per]:
                raise DriftInputError(f"feature {feature!r} is empty in period {per!r}")
    base = hists[baseline_period]
    points = []
    for per in periods:
        cur = hists[per]
        bins = sorted(set(base) | set(cur), key=lambda x: (isinstance(x, str), x))
        points.append(DriftTracePoint(per, psi([base.get(b, 0) for b in bins], [cur.get(b, 0) for b in bins])))
    stored = {str(per): {str(k): int(v) for k, v in sorted(h.items(), key=lambda kv: str(kv[0]))} for per, h in hists.items()}
    return PsiTrace(feature, baseline_period, tuple(points), stored)


# --------------------------------------------------------------------------
# PHI residual-risk proxy


class PatternError(ValueError):
    pass


@dataclass(frozen=True)
class PatternSet:
    categories: Mapping[str, tuple[str, ...]]
    max_risk: int = 8
    version: str = ""

    def __post_init__(self):
        compiled = {}
        for cat, exprs in self.categories.items():
            try:
                compiled[cat] = tuple(re.compile(e) for e in exprs)
            except re.error as exc:
                raise PatternError(f"category {cat!r}: invalid pattern ({exc})") from None
        object.__setattr__(self, "_compiled", compiled)

    @property
    def hash(self) -> str:
        return canonical_hash(self.to_dict())

    def to_dict(self) -> dict:
        return {"version": self.version, "max_risk": self.max_risk, "categories": {k: list(v) for k, v in sorted(self.categories.items())}}

    def matched(self, text: str) -> list[str]:
        return sorted(cat for cat, pats in self._compiled.items() if any(p.search(text) for p in pats))

    def risk(self, text: str) -> int:
        return min(self.max_risk, len(self.matched(text)))

    @classmethod
    def from_dict(cls, obj: Mapping) -> "PatternSet":
        cats = obj.get("categories", obj)
        if not isinstance(cats, Mapping) or not all(isinstance(v, list) for v in cats.values()):
            raise PatternError("pattern config must map category -> list of expressions")
        return cls({k: tuple(v) for k, v in cats.items()}, int(obj.get("max_risk", 8)), str(obj.get("version", "")))


def load_patterns(path: str | Path) -> PatternSet:
    return PatternSet.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def default_patterns() -> PatternSet:
    text = resources.files("clinaudit.data").joinpath("phi_patterns.json").read_text(encoding="utf-8")
    return PatternSet.from_dict(json.loads(text))


@dataclass(frozen=True)
class PhiRiskResult:
    per_note: Mapping[str, int]
    histogram: tuple[int, ...]
    mean_proxy: float
    frac_high_risk: float
    threshold: int
    sampling_plan: Mapping[str, Any]
    patterns_hash: str

    def to_dict(self) -> dict:
        return {
            "mean_proxy": self.mean_proxy,
            "frac_high_risk": self.frac_high_risk,
            "threshold": self.threshold,
            "histogram": list(self.histogram),
            "sampling_plan": dict(self.sampling_plan),
            "patterns_hash": self.patterns_hash,
            "n_notes": len(self.per_note),
        }


def phi_risk_scan(
    corpus: Corpus,
    patterns: PatternSet | None = None,
    high_risk_threshold: int = 3,
    sample_size: int = 100,
    seed: int = 0,
) -> PhiRiskResult:
    """Risk = number of distinct pattern categories matched in a note (capped).

    The manual-review sample takes notes in descending risk order, ties
    broken by a seeded random key.
    """
    patterns = patterns or default_patterns()
    n = len(corpus)
    if sample_size > n:
        raise ValueError(f"sample_size {sample_size} exceeds corpus size {n}")
    per_note = {note.note_id: patterns.risk(note.text) for note in corpus}
    hist = [0] * (patterns.max_risk + 1)
    for r in per_note.values():
        hist[r] += 1
    ids = [note.note_id for note in corpus]
    keys = np.random.default_rng(seed).random(n)
    order = sorted(range(n), key=lambda i: (-per_note[ids[i]], keys[i]))
    high = sum(c for r, c in enumerate(hist) if r >= high_risk_threshold)
    return PhiRiskResult(
        per_note=per_note,
        histogram=tuple(hist),
        mean_proxy=(sum(per_note.values()) / n) if n else 0.0,
        frac_high_risk=(high / n) if n else 0.0,
        threshold=high_risk_threshold,
        sampling_plan={"sample_size": sample_size, "seed": seed, "note_ids": [ids[i] for i in order[:sample_size]]},
        patterns_hash=patterns.hash,
    )
