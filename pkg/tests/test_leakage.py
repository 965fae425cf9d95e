import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinaudit.corpus_io import Corpus, Note, SplitManifest
from clinaudit.fixture import FixtureKnobs, make_fixture
from clinaudit.leakage import (
    EmptyPartitionError,
    SimilarityConfig,
    audit_splits,
    leak_curve,
    patient_overlap,
    similarity,
)

from oracles import brute_force_best, char_ngrams, jaccard, word_set


def _split(assign, key="note"):
    return SplitManifest(key, 0, assign)


def test_similarity_against_sets():
    a, b = "the quick brown fox jumps", "the quick brown cat jumps"
    assert similarity(a, b) == pytest.approx(jaccard(char_ngrams(a), char_ngrams(b)))
    tok = SimilarityConfig(method="token_jaccard")
    assert similarity(a, b, tok) == pytest.approx(jaccard(word_set(a), word_set(b)))
    assert similarity(a, a) == 1.0 and similarity("", "") == 1.0 and similarity("", "abc") == 0.0


def test_exact_curve_matches_brute_force():
    corpus, split = make_fixture(120, 1, 5, FixtureKnobs(duplicate_across_splits=3, near_dup_similarities=[0.8, 0.6, 0.4]))
    curve = leak_curve(corpus, split)
    oracle = brute_force_best(corpus, split)
    for tid, (rid, s) in oracle.items():
        assert curve.best[tid][1] == pytest.approx(s, abs=1e-12)
        if s > 0:
            assert curve.best[tid][0] == rid
    for tau, count in zip(curve.thresholds, curve.counts):
        assert count == sum(1 for _, s in oracle.values() if s >= tau)


def test_token_curve_matches_brute_force():
    corpus, split = make_fixture(80, 1, 6, FixtureKnobs(near_dup_similarities=[0.9, 0.5]))
    curve = leak_curve(corpus, split, SimilarityConfig(method="token_jaccard"))
    oracle = brute_force_best(corpus, split, unit=word_set)
    assert {t: round(s, 12) for t, (_, s) in curve.best.items()} == {t: round(s, 12) for t, (_, s) in oracle.items()}


def test_tie_break_lowest_train_id():
    notes = [Note("t1", "pa", "alpha beta gamma"), Note("r2", "pb", "alpha beta gamma"), Note("r1", "pc", "alpha beta gamma")]
    curve = leak_curve(Corpus.from_notes(notes), _split({"t1": "test", "r2": "train", "r1": "train"}))
    assert curve.best["t1"] == ("r1", 1.0)


def test_minhash_finds_planted_duplicates():
    corpus, split = make_fixture(300, 1, 9, FixtureKnobs(duplicate_across_splits=4, near_dup_similarities=[0.9, 0.88]))
    exact = leak_curve(corpus, split)
    mh = leak_curve(corpus, split, SimilarityConfig(method="minhash_estimate"))
    assert mh.counts[-1] == exact.counts[-1] == 6
    assert [o.test_id for o in mh.offenders[0.85]] == [o.test_id for o in exact.offenders[0.85]]


def test_empty_partition():
    corpus = Corpus.from_notes([Note("a", "p", "x")])
    with pytest.raises(EmptyPartitionError):
        leak_curve(corpus, _split({"a": "train"}))


def test_config_validation():
    for bad in ({"method": "cosine"}, {"thresholds": (0.5, 0.3)}, {"thresholds": (0.0,)}, {"method": "minhash_estimate", "bands": 10}):
        with pytest.raises(ValueError):
            SimilarityConfig(**bad)


def test_patient_overlap_report():
    corpus, split = make_fixture(50, 3, 2, FixtureKnobs(patient_overlap=2))
    rep = patient_overlap(corpus, split)
    assert len(rep.patients) == 2 and split.split_key == "note"


def test_audit_record_findings_and_activity():
    corpus, split = make_fixture(200, 1, 3, FixtureKnobs(duplicate_across_splits=2))
    rec = audit_splits(corpus, split)
    assert not rec.passed
    assert any("L(0.85)" in f for f in rec.findings)
    assert sum("disclosure" in f for f in rec.findings) == 2
    act = rec.provenance_activity(timestamp="2024-01-01T00:00:00+00:00")
    assert act.event_type == "split_sampling" and act.fields["output_hash"] == rec.hash
    ok = audit_splits(*make_fixture(200, 1, 3), disclosures={
        "label_leakage": {"declared": False, "justification": "n/a"},
        "contamination": {"declared": True, "justification": "checked"},
    })
    assert ok.passed


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.floats(0.05, 1.0), max_size=4))
def test_property_curve_nonincreasing(seed, sims):
    corpus, split = make_fixture(40, 1, seed, FixtureKnobs(near_dup_similarities=sims, min_tokens=10, max_tokens=30))
    counts = leak_curve(corpus, split, SimilarityConfig(thresholds=(0.1, 0.3, 0.5, 0.7, 0.85, 1.0))).counts
    assert all(b <= a for a, b in zip(counts, counts[1:]))


def test_random_texts_rarely_similar():
    rng = random.Random(0)
    words = [f"w{i}" for i in range(500)]
    a = " ".join(rng.choice(words) for _ in range(60))
    b = " ".join(rng.choice(words) for _ in range(60))
    assert similarity(a, b) < 0.3
