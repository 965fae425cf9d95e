import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinaudit.corpus_io import Corpus, Note
from clinaudit.fixture import REFERENCE_PHI_RISK, FixtureKnobs, make_fixture
from clinaudit.metrics import (
    DegenerateAgreementError,
    DriftInputError,
    PatternError,
    PatternSet,
    cohen_kappa,
    default_patterns,
    fleiss_kappa,
    length_bins,
    length_histogram,
    missingness,
    phi_risk_scan,
    psi,
    psi_trace,
)

from oracles import cohen_2x2, fleiss_reference, psi_closed_form


# ---- missingness


def test_missingness_exact_counts_and_structure():
    notes = [
        Note("a", "p", "t", "ed", None, (), (), None),
        Note("b", "p", "t", "progress", None, (), ("I10",), 0.5),
        Note("c", "p", "t", "nursing", 2012, (), (), 0.5),
        Note("d", "p", "t", None, 2012, (), ("I10",), 0.5),
    ]
    prof = missingness(Corpus.from_notes(notes), strata_by="note_type")
    assert prof.counts == {"admission_year": 2, "quality_score": 1, "icd_codes": 2, "phi_spans": 4, "note_type": 1}
    assert prof.structural["admission_year"] == 1 and prof.incidental["admission_year"] == 1
    assert prof.kind["icd_codes"] == "incidental"  # one nursing (structural), one ed (incidental): tie is not structural
    assert prof.strata["ed"]["admission_year"] == 1.0
    assert prof.strata["missing"]["note_type"] == 1.0


def test_missingness_fixture_knobs():
    corpus, _ = make_fixture(500, 2, 0, FixtureKnobs(icd_empty_frac=0.045, quality_missing_frac=0.2))
    prof = missingness(corpus)
    assert prof.counts["icd_codes"] == 45 and prof.counts["quality_score"] == 200


def test_missingness_unknown_field():
    with pytest.raises(KeyError):
        missingness(Corpus.from_notes([]), fields=("colour",))


# ---- agreement


def test_cohen_hand_formula():
    a = ["y"] * 20 + ["y"] * 5 + ["n"] * 10 + ["n"] * 15
    b = ["y"] * 20 + ["n"] * 5 + ["y"] * 10 + ["n"] * 15
    res = cohen_kappa(a, b, B=200)
    assert res.value == pytest.approx(cohen_2x2(20, 5, 10, 15), abs=1e-12)
    # p_o = 35/50, p_e = (25*30 + 25*20)/50**2 = 1/2
    assert res.value == pytest.approx(0.4, abs=1e-12)
    assert (res.p_o, res.p_e) == (0.7, 0.5)
    assert res.ci_low <= res.value <= res.ci_high


def test_perfect_agreement():
    labels = list("abcabcab")
    assert cohen_kappa(labels, labels, B=50).value == 1.0
    assert fleiss_kappa([[3, 0], [0, 3], [3, 0]], B=50).value == 1.0


def test_cohen_constant_raters():
    assert cohen_kappa(["a", "a"], ["a", "a"], B=0).value == 1.0
    assert cohen_kappa(["a", "a"], ["b", "b"], B=0).value == 0.0
    with pytest.raises(ValueError):
        cohen_kappa(["a"], ["a", "b"])


def test_fleiss_classic_table():
    # the 10-subject, 14-rater, 5-category worked example from Fleiss (1971)
    table = [
        [0, 0, 0, 0, 14], [0, 2, 6, 4, 2], [0, 0, 3, 5, 6], [0, 3, 9, 2, 0], [2, 2, 8, 1, 1],
        [7, 7, 0, 0, 0], [3, 2, 6, 3, 0], [2, 5, 3, 2, 2], [6, 5, 2, 1, 0], [0, 2, 2, 3, 7],
    ]
    assert fleiss_kappa(table, B=0).value == pytest.approx(0.20993, abs=1e-5)


def test_fleiss_errors():
    with pytest.raises(DegenerateAgreementError):
        fleiss_kappa([[2, 1]])
    with pytest.raises(ValueError, match="ragged"):
        fleiss_kappa([[2, 1], [1, 1]])


def test_bootstrap_reproducible_and_seed_sensitive():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 4, 300).tolist()
    b = [x if rng.random() < 0.7 else int(rng.integers(0, 4)) for x in a]
    r1, r2 = cohen_kappa(a, b, seed=5), cohen_kappa(a, b, seed=5)
    assert (r1.ci_low, r1.ci_high) == (r2.ci_low, r2.ci_high)
    assert (r1.ci_low, r1.ci_high) != (cohen_kappa(a, b, seed=6).ci_low, cohen_kappa(a, b, seed=6).ci_high)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(2, 5), st.integers(2, 6), st.integers(0, 2**31))
def test_property_fleiss_matches_reference(n_items, n_cat, n_raters, seed):
    rng = np.random.default_rng(seed)
    m = np.array([rng.multinomial(n_raters, rng.dirichlet(np.ones(n_cat))) for _ in range(n_items)])
    col = m.sum(axis=0)
    if (col @ col) == (n_items * n_raters) ** 2:
        return  # all ratings in one category: expected agreement is 1
    assert fleiss_kappa(m, B=0).value == pytest.approx(fleiss_reference(m.tolist()), rel=1e-9, abs=1e-12)


# ---- PSI


def test_psi_two_bin_closed_form():
    assert psi([0.5, 0.5], [0.8, 0.2]) == pytest.approx(psi_closed_form([0.5, 0.5], [0.8, 0.2]), abs=1e-12)
    assert psi([0.5, 0.5], [0.8, 0.2]) == pytest.approx(0.4158883083, abs=1e-9)


def test_psi_zero_bins_smoothed():
    v = psi([10, 0], [5, 5])
    assert math.isfinite(v) and v > 0


def test_psi_input_errors():
    with pytest.raises(DriftInputError):
        psi([1, 2], [1, 2, 3])
    with pytest.raises(DriftInputError):
        psi([0, 0], [1, 1])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=12), st.lists(st.integers(0, 50), min_size=1, max_size=12))
def test_property_psi(p, q):
    n = min(len(p), len(q))
    p, q = p[:n], q[:n]
    if sum(p) == 0 or sum(q) == 0:
        return
    assert psi(p, p) <= 1e-12
    v = psi(p, q)
    assert v >= -1e-12
    assert v == pytest.approx(psi(q, p), rel=1e-9, abs=1e-12)


def test_psi_trace_monotone_under_planted_shift():
    corpus, _ = make_fixture(600, 2, 4, FixtureKnobs(icd_shift=0.1))
    trace = psi_trace(corpus, "icd_histogram", 2010)
    vals = [p.psi for p in trace.points]
    assert [p.period for p in trace.points] == list(range(2010, 2020))
    assert vals[0] == 0.0
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_psi_trace_errors():
    corpus = Corpus.from_notes([Note("a", "p", "x", admission_year=None)])
    with pytest.raises(DriftInputError):
        psi_trace(corpus, "icd_histogram", 2010)
    corpus = Corpus.from_notes([Note("a", "p", "x", admission_year=2010)])
    with pytest.raises(DriftInputError):
        psi_trace(corpus, "icd_histogram", 2011)


def test_length_histogram():
    notes = [Note("a", "p", "w " * 50), Note("b", "p", "w " * 150), Note("c", "p", "w " * 9000)]
    h = length_histogram(notes)
    assert length_bins()[0] == 50 and length_bins()[-1] == 2050
    assert h[0] == 1 and h[1] == 1 and h[-1] == 1 and sum(h) == 3


# ---- PHI proxy


def test_pattern_categories_are_distinct():
    pats = default_patterns()
    assert pats.risk("Seen by Dr. Alvarez on 03/14/2012, call 555-201-3344.") == 3
    assert pats.risk("plain words only") == 0


def test_phi_scan_fixture_counts_and_plan():
    corpus, _ = make_fixture(1000, 1, 2, FixtureKnobs(phi_risk=REFERENCE_PHI_RISK))
    res = phi_risk_scan(corpus, sample_size=20, seed=1)
    assert res.histogram[1:4] == (80, 9, 4)
    assert res.frac_high_risk == pytest.approx(0.004)
    plan = res.sampling_plan["note_ids"]
    risks = [res.per_note[i] for i in plan]
    assert risks == sorted(risks, reverse=True) and risks[0] == 3
    assert plan == phi_risk_scan(corpus, sample_size=20, seed=1).sampling_plan["note_ids"]


def test_risk_capped():
    pats = PatternSet({f"C{i}": ("x",) for i in range(12)}, max_risk=8)
    assert pats.risk("x") == 8


def test_bad_pattern_config():
    with pytest.raises(PatternError):
        PatternSet.from_dict({"categories": {"DATE": "not-a-list"}})
    with pytest.raises(ValueError):
        phi_risk_scan(Corpus.from_notes([Note("a", "p", "x")]), sample_size=5)
