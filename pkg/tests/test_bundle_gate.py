import json
import shutil

from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinaudit.bundle import (
    LAYOUT,
    BundleInputs,
    MissingComponentError,
    ReleaseCollisionError,
    assemble_bundle,
    read_manifest,
    verify_bundle,
)
from clinaudit.bundle import BundleView
from clinaudit.gate import (
    GatePolicy,
    PolicyError,
    check_documentation_completeness,
    check_leakage_ceiling,
    default_policy,
    gate,
)
from clinaudit.release import DEFECT_CHECK, DEFECTS, blank_fields, build_release, golden_card, golden_datasheet
from clinaudit.schema import default_schema, parse_doc_obj


def _inputs(src):
    return BundleInputs(
        datasheet=src / "datasheet/datasheet.json",
        card=src / "model_card/card.json",
        provenance=src / "provenance",
        metrics=src / "metrics",
    )


def test_layout_and_manifest_cover_every_file(golden_bundle):
    assert all((golden_bundle / d).is_dir() for d in LAYOUT)
    listed = set(read_manifest(golden_bundle / "release/checksums"))
    on_disk = {p.relative_to(golden_bundle).as_posix() for p in golden_bundle.rglob("*") if p.is_file()}
    assert listed == on_disk - {"release/checksums"}


def test_assemble_idempotent_and_single_change(golden_bundle, tmp_path):
    out = tmp_path / "rel"
    assemble_bundle(_inputs(golden_bundle), out)
    first = (out / "release/checksums").read_bytes()
    assemble_bundle(_inputs(golden_bundle), out)
    assert (out / "release/checksums").read_bytes() == first

    src = tmp_path / "src"
    shutil.copytree(golden_bundle, src)
    cfg = src / "metrics/config/preprocess.json"
    cfg.write_text(cfg.read_text().replace("lowercase", "LOWERCASE"))
    with pytest.raises(ReleaseCollisionError):
        assemble_bundle(_inputs(src), out)
    assemble_bundle(_inputs(src), out, update=True)
    before = dict(line.split("  ")[::-1] for line in first.decode().splitlines())
    after = read_manifest(out / "release/checksums")
    assert [k for k in after if after[k] != before.get(k)] == ["metrics/config/preprocess.json"]


def test_assemble_missing_input(tmp_path, golden_bundle):
    inputs = _inputs(golden_bundle)
    inputs.card = tmp_path / "nope.json"
    with pytest.raises(MissingComponentError):
        assemble_bundle(inputs, tmp_path / "x")


def test_golden_passes_and_verifies(golden_bundle):
    rep = gate(golden_bundle)
    assert rep.verdict == "pass", rep.summary()
    assert verify_bundle(golden_bundle).consistent


def test_gate_is_deterministic(golden_bundle, tmp_path):
    again = build_release(tmp_path / "again")
    assert gate(golden_bundle).to_json() == gate(golden_bundle).to_json()
    # an independent rebuild gives the same report byte for byte
    assert gate(again).to_json() == gate(golden_bundle).to_json()


def test_evidence_references_artifact_hashes(golden_bundle):
    rep = gate(golden_bundle).to_dict()
    assert rep["policy"]["hash"] == default_policy().policy_hash
    for check in rep["checks"]:
        assert "artifact_hash" in json.dumps(check["evidence"]), check["check_id"]


@pytest.mark.parametrize("defect", DEFECTS)
def test_each_mutant_fails_its_check(mutant_bundles, defect):
    rep = gate(mutant_bundles[defect])
    assert rep.verdict == "fail"
    assert DEFECT_CHECK[defect] in rep.failed_checks


def test_verify_names_stale_entity(mutant_bundles):
    rep = verify_bundle(mutant_bundles["stale_provenance"])
    assert not rep.consistent
    assert [(f.kind, f.subject) for f in rep.findings] == [("stale_entity", "preprocess_config")]
    assert rep.to_dict()["status"] == "inconsistent release"


def test_verify_catches_deleted_field(golden_bundle, tmp_path):
    b = tmp_path / "b"
    shutil.copytree(golden_bundle, b)
    doc = json.loads((b / "datasheet/datasheet.json").read_text())
    del doc["sections"]["maintenance"]["deprecation"]
    (b / "datasheet/datasheet.json").write_text(json.dumps(doc))
    kinds = {(f.kind, f.subject) for f in verify_bundle(b).findings}
    assert ("metric_recompute", "completeness.datasheet") in kinds


def test_verify_catches_edited_metric(golden_bundle, tmp_path):
    b = tmp_path / "b"
    shutil.copytree(golden_bundle, b)
    rep = json.loads((b / "metrics/report.json").read_text())
    rep["drift"]["points"][3]["psi"] *= 1 + 1e-6
    (b / "metrics/report.json").write_text(json.dumps(rep))
    subjects = {f.subject for f in verify_bundle(b).findings if f.kind == "metric_recompute"}
    assert subjects == {"drift"}


def test_missing_directory_named(golden_bundle, tmp_path):
    b = tmp_path / "b"
    shutil.copytree(golden_bundle, b)
    shutil.rmtree(b / "provenance")
    with pytest.raises(MissingComponentError, match="provenance"):
        gate(b)
    assert verify_bundle(b).findings[0].kind == "layout"


def test_signature_is_warning_only(golden_bundle, tmp_path):
    b = tmp_path / "b"
    shutil.copytree(golden_bundle, b)
    assert gate(b).per_check["detached_signature"]["status"] == "warn"
    (b / "release/checksums.sig").write_text("sig\n")
    rep = gate(b)
    assert rep.per_check["detached_signature"]["status"] == "pass" and rep.passed


def test_policy_validation():
    with pytest.raises(PolicyError):
        GatePolicy.from_dict({"checks": [{"check_id": "drift_plan"}, {"check_id": "drift_plan"}]})
    with pytest.raises(PolicyError):
        GatePolicy.from_dict({"checks": [{"check_id": "vibes"}]})
    with pytest.raises(PolicyError):
        GatePolicy.from_dict({"checks": [{"check_id": "drift_plan", "severity": "fatal"}]})


def test_policy_ceilings_are_editable(mutant_bundles):
    leaky = mutant_bundles["over_ceiling_leakage"]
    raw = default_policy().to_dict()
    raw["checks"][3]["params"]["ceilings"] = {"0.70": 0.05, "0.85": 0.05}
    relaxed = GatePolicy.from_dict(raw)
    rep = gate(leaky, relaxed)
    assert rep.policy_hash != default_policy().policy_hash
    assert rep.passed
    assert not gate(leaky).passed


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 0.05), st.floats(0, 0.05)), min_size=2, max_size=2), st.floats(0, 0.05))
def test_property_worse_leakage_never_passes(rates, extra):
    ceilings = {"0.70": 0.01, "0.85": 0.005}

    def verdict(pair):
        view = BundleView(root=Path("."), report={"leakage": {"curve": {"method": "m", "points": [
            {"threshold": 0.70, "rate": pair[0]}, {"threshold": 0.85, "rate": pair[1]}]}}})
        return check_leakage_ceiling(view, {"ceilings": ceilings})[0]

    for pair in rates:
        worse = (pair[0] + extra, pair[1] + extra)
        if not verdict(pair):
            assert not verdict(worse)


@settings(max_examples=30, deadline=None)
@given(st.sets(st.integers(0, 35), max_size=6), st.sets(st.integers(0, 35), max_size=6))
def test_property_more_blanks_never_pass(a, extra):
    schema = default_schema("datasheet")
    keys = [s.key for s in schema.mandatory]

    def passes(blanked):
        doc = blank_fields(golden_datasheet(), [keys[i] for i in blanked])
        card_schema = default_schema("card")
        view = BundleView(root=Path("."), docs={
            "datasheet": (parse_doc_obj(doc, schema), schema),
            "card": (parse_doc_obj(golden_card(), card_schema), card_schema)})
        params = {"documents": ["datasheet", "card"], "min_completeness": 1.0}
        return check_documentation_completeness(view, params)[0]

    if not passes(a):
        assert not passes(a | extra)


def test_monotone_gating(mutant_bundles, tmp_path):
    # adding a second defect on top of a failing bundle keeps it failing
    b = tmp_path / "b"
    shutil.copytree(mutant_bundles["blank_mandatory_field"], b)
    (b / "metrics/agreement.json").unlink()
    assert gate(b).verdict == "fail"
