"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (lines are printed even
under output capture).
"""
from __future__ import annotations

import random
import time
from pathlib import Path

import numpy as np
import pytest

from clinaudit import datfiles, kernels
from clinaudit.cli import main as cli_main
from clinaudit.fixture import REFERENCE_PHI_RISK, FixtureKnobs, make_fixture
from clinaudit.gate import gate
from clinaudit.leakage import SimilarityConfig, _csr, leak_curve, minhash_seeds, shingles
from clinaudit.metrics import cohen_kappa, fleiss_kappa, missingness, phi_risk_scan, psi, psi_trace
from clinaudit.provenance import EVENT_TYPES, ProvActivity, exemplar, lineage, minimal_fields, validate_activity, verify_hashes
from clinaudit.release import DEFECT_CHECK, DEFECTS, ReleaseConfig, blank_fields, build_release, golden_datasheet
from clinaudit.schema import Schema, completeness, default_schema, parse_doc_obj
from clinaudit.suite import dat_files

from builders import CHAIN, worked_example
from oracles import brute_force_best, cohen_2x2, fleiss_reference, psi_closed_form, random_schema_doc

GOLDEN = Path(__file__).parent / "golden"
# planted near-duplicates sized to give 6.20 / 1.50 / 0.60 / 0.20 percent at 0.30 / 0.50 / 0.70 / 0.85
LEAK_RATE_SIMS = [0.9] * 2 + [0.77] * 4 + [0.6] * 9 + [0.4] * 47


def report(capsys, criterion: str, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n[acceptance] criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")


def test_criterion_1_completeness_oracle(capsys):
    t0 = time.perf_counter()
    rng = random.Random(2024)
    mismatches = 0
    for _ in range(50):
        schema_obj, doc, populated = random_schema_doc(rng, n_mandatory=40)
        schema = Schema.from_dict(schema_obj)
        rep = completeness(parse_doc_obj(doc, schema), schema)
        mismatches += rep.n_mandatory != 40 or rep.exact * 40 != populated or len(rep.missing_mandatory) != 40 - populated
        # the same document with every mandatory field filled
        for f in schema_obj["fields"]:
            good = {"text": "t", "enum_choice": "a", "number": 1, "boolean": True, "reference": "r"}[f["kind"]]
            doc["sections"].setdefault(f["section"], {})[f["field"]] = {"content": good, "version_stamp": "v1"}
        full = completeness(parse_doc_obj(doc, schema), schema)
        mismatches += full.C != 1.0 or full.missing_mandatory != ()
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 1.0
    report(capsys, "1", ok, f"50 random 40-field instances, {mismatches} mismatches, {elapsed:.2f}s (< 1 s)")
    assert ok


def test_criterion_2_leakage_oracle(capsys):
    t0 = time.perf_counter()
    problems = []
    for k in (0, 1, 5, 20):
        corpus, split = make_fixture(400, 1, 100 + k, FixtureKnobs(duplicate_across_splits=k))
        curve = leak_curve(corpus, split)
        oracle = brute_force_best(corpus, split)
        for tau in curve.thresholds:
            got = {o.test_id for o in curve.offenders[tau]}
            want = {t for t, (_, s) in oracle.items() if s >= tau}
            if got != want:
                problems.append(f"k={k} tau={tau}: offender sets differ")
        if curve.counts[-1] * len(split.ids("test")) != k * curve.n_test or curve.counts[-1] != k:
            problems.append(f"k={k}: L(0.85) = {curve.counts[-1]}/{curve.n_test}")
    increasing = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        sims = rng.uniform(0.05, 1.0, size=int(rng.integers(0, 5))).tolist()
        corpus, split = make_fixture(40, 1, seed, FixtureKnobs(near_dup_similarities=sims, min_tokens=8, max_tokens=30))
        c = leak_curve(corpus, split, SimilarityConfig(thresholds=(0.1, 0.3, 0.5, 0.7, 0.85, 1.0))).counts
        increasing += any(b > a for a, b in zip(c, c[1:]))
    elapsed = time.perf_counter() - t0
    ok = not problems and increasing == 0 and elapsed < 30
    report(capsys, "2", ok, f"k in (0,1,5,20) oracle-equal, L(0.85)=k/n_test; 100 curves nonincreasing ({increasing} violations); {elapsed:.1f}s (< 30 s) {problems[:2]}")
    assert ok


def _minhash_pairs(n_pairs: int, seed: int):
    rng = np.random.default_rng(seed)
    vocab = [f"tok{i}" for i in range(3000)]
    docs = []
    for _ in range(n_pairs):
        m = int(rng.integers(30, 80))
        base = [vocab[j] for j in rng.choice(len(vocab), size=m, replace=False)]
        r = int(rng.integers(0, m + 1))
        pos = set(rng.choice(m, size=r, replace=False).tolist())
        variant = [f"new{j}x{int(rng.integers(1e9))}" if j in pos else w for j, w in enumerate(base)]
        docs.append(" ".join(base))
        docs.append(" ".join(variant))
    return docs


def test_criterion_3_minhash_soundness(capsys):
    t0 = time.perf_counter()
    missed = planted = 0
    for seed in range(20):
        knobs = FixtureKnobs(duplicate_across_splits=3, near_dup_similarities=[0.97, 0.93, 0.9, 0.88])
        corpus, split = make_fixture(250, 1, 500 + seed, knobs)
        exact = leak_curve(corpus, split)
        mh = leak_curve(corpus, split, SimilarityConfig(method="minhash_estimate", seed=seed))
        want = {o.test_id for o in exact.offenders[0.85]}
        got = {o.test_id for o in mh.offenders[0.85]}
        planted += len(want)
        missed += len(want - got)
    cfg = SimilarityConfig(method="minhash_estimate")
    docs = _minhash_pairs(10_000, 7)
    sets = [shingles(d, cfg) for d in docs]
    ptr, val = _csr(sets)
    sig = kernels.minhash_signatures(ptr, val, minhash_seeds(cfg))
    est = (sig[0::2] == sig[1::2]).mean(axis=1)
    ia = np.arange(0, len(docs), 2)
    exact_j = kernels.pair_jaccard(ptr, val, ptr, val, ia, ia + 1)
    bias = float(np.mean(est - exact_j))
    elapsed = time.perf_counter() - t0
    ok = missed == 0 and abs(bias) < 0.02
    report(capsys, "3", ok, f"{missed}/{planted} planted >= 0.85 missed over 20 fixtures; bias {bias:+.4f} over 10k pairs (exact J mean {exact_j.mean():.3f}); {elapsed:.1f}s")
    assert ok


def test_criterion_4_psi(capsys, tmp_path):
    hist = [5, 0, 12, 3, 80]
    identical = psi(hist, hist)
    two_bin = psi([0.5, 0.5], [0.8, 0.2])
    closed = psi_closed_form([0.5, 0.5], [0.8, 0.2])
    corpus, _ = make_fixture(5000, 2, 4, FixtureKnobs(icd_shift=0.02, min_tokens=5, max_tokens=10))
    trace = psi_trace(corpus, "icd_histogram", 2010)
    vals = [p.psi for p in trace.points]
    text = datfiles.year_psi((p.period, p.psi) for p in trace.points)
    ok = (
        identical <= 1e-12
        and abs(two_bin - closed) < 1e-9
        and abs(two_bin - 0.4158883083359672) < 1e-9
        and [p.period for p in trace.points] == list(range(2010, 2020))
        and all(b >= a for a, b in zip(vals, vals[1:]))
        and text.encode() == (GOLDEN / "year_psi.dat").read_bytes()
    )
    report(capsys, "4", ok, f"identical {identical:.1e}; two-bin {two_bin:.10f}; 10-year trace nondecreasing, last {vals[-1]:.4f}")
    assert ok


def test_criterion_5_agreement(capsys):
    perfect = cohen_kappa(list("abcab"), list("abcab"), B=100).value == 1.0 and fleiss_kappa([[4, 0, 0], [0, 4, 0], [0, 0, 4]], B=100).value == 1.0
    a = ["y"] * 25 + ["n"] * 25
    b = ["y"] * 20 + ["n"] * 5 + ["y"] * 10 + ["n"] * 15
    kappa = cohen_kappa(a, b, B=200).value
    hand = cohen_2x2(20, 5, 10, 15)
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        n_items, n_cat, n_raters = int(rng.integers(2, 40)), int(rng.integers(2, 6)), int(rng.integers(2, 8))
        m = np.array([rng.multinomial(n_raters, rng.dirichlet(np.ones(n_cat))) for _ in range(n_items)])
        m[0] = 0
        m[0, 0], m[0, 1] = n_raters - 1, 1  # keep expected agreement below 1
        ref = fleiss_reference(m.tolist())
        worst = max(worst, abs(fleiss_kappa(m, B=0).value - ref) / max(abs(ref), 1e-300))
    r1 = cohen_kappa(a, b, B=1000, seed=17)
    r2 = cohen_kappa(a, b, B=1000, seed=17)
    f1 = fleiss_kappa(m, B=500, seed=3)
    f2 = fleiss_kappa(m, B=500, seed=3)
    same_ci = (r1.ci_low, r1.ci_high) == (r2.ci_low, r2.ci_high) and (f1.ci_low, f1.ci_high) == (f2.ci_low, f2.ci_high)
    ok = perfect and abs(kappa - hand) < 1e-6 and worst < 1e-9 and same_ci
    report(capsys, "5", ok, f"perfect=1 both; Cohen (20,5;10,15) = {kappa:.6f} vs hand formula {hand:.6f}; Fleiss max rel err {worst:.1e} over 100; CIs bit-identical={same_ci}")
    assert ok


@pytest.mark.xfail(strict=True, reason="the stated literal assumes p_e = 0.51; the table's margins give p_e = 0.50 (see decisions ledger)")
def test_criterion_5_literal_value(capsys):
    a = ["y"] * 25 + ["n"] * 25
    b = ["y"] * 20 + ["n"] * 5 + ["y"] * 10 + ["n"] * 15
    res = cohen_kappa(a, b, B=0)
    ok = abs(res.value - 0.387755) < 1e-6
    report(capsys, "5-literal", ok, f"kappa {res.value:.6f} (p_o {res.p_o}, p_e {res.p_e}) vs stated 0.387755")
    assert ok


def test_criterion_6_phi_calibration(capsys):
    corpus, _ = make_fixture(10_000, 1, 6, FixtureKnobs(phi_risk=REFERENCE_PHI_RISK))
    res = phi_risk_scan(corpus, sample_size=100, seed=6)
    mean_err = abs(res.mean_proxy - 0.11) / 0.11
    frac_err = abs(res.frac_high_risk - 0.004) / 0.004
    ok = mean_err <= 0.10 and frac_err <= 0.10
    report(capsys, "6", ok, f"mean proxy {res.mean_proxy:.4f} (target 0.11, rel err {mean_err:.1%}); risk>=3 {res.frac_high_risk:.2%} (target 0.40%, rel err {frac_err:.1%})")
    assert ok


def test_criterion_7_provenance_integrity(capsys, tmp_path):
    matrix_ok = True
    cells = 0
    for et in EVENT_TYPES:
        ex = exemplar(et)
        matrix_ok &= validate_activity(ProvActivity("x", et, "2024-01-01T00:00:00Z", "a", ex)) == []
        for key in minimal_fields(et):
            cells += 1
            issues = validate_activity(ProvActivity("x", et, "2024-01-01T00:00:00Z", "a", {k: v for k, v in ex.items() if k != key}))
            matrix_ok &= len(issues) == 1 and issues[0].code == "missing_minimal_field"
    bundle = worked_example(tmp_path / "art")
    target = tmp_path / "art" / "split.json"
    data = bytearray(target.read_bytes())
    data[3] ^= 0x20
    target.write_bytes(bytes(data))
    mism = verify_hashes(bundle, tmp_path / "art").mismatches
    chain = lineage(bundle, "e4").event_chain
    ok = matrix_ok and len(mism) == 1 and mism[0].entity_id == "e3" and chain == CHAIN
    report(capsys, "7", ok, f"8 exemplars valid, {cells} single-field deletions rejected={matrix_ok}; tamper -> {len(mism)} mismatch; lineage {' -> '.join(chain)}")
    assert ok


def test_criterion_8_gate_end_to_end(capsys, tmp_path):
    t0 = time.perf_counter()
    golden = build_release(tmp_path / "golden")
    golden_exit = cli_main(["gate", str(golden), "--out", str(tmp_path / "out")])
    results = {}
    for defect in DEFECTS:
        b = build_release(tmp_path / defect, ReleaseConfig(defect=defect))
        code = cli_main(["gate", str(b), "--out", str(tmp_path / "out" / defect)])
        results[defect] = (code, DEFECT_CHECK[defect] in gate(b).failed_checks)
    elapsed = time.perf_counter() - t0
    ok = golden_exit == 0 and all(code == 1 and named for code, named in results.values()) and elapsed < 120
    bad = [d for d, (c, n) in results.items() if not (c == 1 and n)]
    report(capsys, "8", ok, f"golden exit {golden_exit}; 7 mutants exit 1 with named check (failures: {bad or 'none'}); {elapsed:.1f}s (< 120 s)")
    assert ok


def test_criterion_9_report_formats(capsys):
    emitted = {}
    # section pct: golden datasheet with two blanked mandatory fields
    schema = default_schema("datasheet")
    doc = blank_fields(golden_datasheet(), [("deid_privacy", "access_controls"), ("maintenance", "deprecation")])
    rep = completeness(parse_doc_obj(doc, schema), schema)
    emitted["section_pct.dat"] = dat_files({"completeness": {"datasheet": rep.to_dict()}})["datasheet_completeness.dat"]
    # threshold pct: a fixture built to hit the worked-example leakage rates
    corpus, split = make_fixture(6667, 1, 3, FixtureKnobs(near_dup_similarities=LEAK_RATE_SIMS))
    emitted["leak_table.dat"] = datfiles.threshold_pct(leak_curve(corpus, split).points)
    # risk count
    corpus, _ = make_fixture(1000, 1, 2, FixtureKnobs(phi_risk=REFERENCE_PHI_RISK))
    emitted["risk_count.dat"] = dat_files({"phi_risk": phi_risk_scan(corpus, sample_size=10).to_dict()})["phi_risk.dat"]
    # field pct
    knobs = FixtureKnobs(year_missing_frac=0.12, quality_missing_frac=0.2, icd_empty_frac=0.045, note_type_missing_frac=0.01)
    corpus, _ = make_fixture(1000, 1, 8, knobs)
    emitted["field_pct.dat"] = dat_files({"missingness": missingness(corpus).to_dict()})["missingness.dat"]
    # year psi
    corpus, _ = make_fixture(5000, 2, 4, FixtureKnobs(icd_shift=0.02, min_tokens=5, max_tokens=10))
    trace = psi_trace(corpus, "icd_histogram", 2010)
    emitted["year_psi.dat"] = dat_files({"drift": trace.to_dict()})["psi.dat"]

    diffs = [name for name, text in emitted.items() if text.encode() != (GOLDEN / name).read_bytes()]
    ok = not diffs
    report(capsys, "9", ok, f"{len(emitted) - len(diffs)}/{len(emitted)} data files byte-match golden; leakage rows {emitted['leak_table.dat'].splitlines()[1:]}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
