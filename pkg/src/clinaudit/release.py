"""Build a complete, internally consistent release bundle from a synthetic corpus.

Used for the golden bundle, for single-defect mutants of it, and by the
``fixture --bundle`` CLI path.  Every byte is a function of the arguments, so
two builds with the same arguments are identical.
"""
from __future__ import annotations

import json
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .bundle import BundleInputs, assemble_bundle
from .corpus_io import write_corpus, write_split
from .fixture import FixtureKnobs, make_fixture
from .hashing import canonical_hash, sha256_file, write_json
from .metrics import default_patterns
from .provenance import ProvActivity, ProvAgent, ProvEdge, ProvEntity, build_bundle, save_bundle
from .schema import Schema, default_schema, parse_doc
from .suite import SuiteInputs, compute, write_outputs
from .leakage import SimilarityConfig, audit_splits

DEFECTS = (
    "blank_mandatory_field",
    "patient_overlap",
    "over_ceiling_leakage",
    "missing_agreement",
    "missing_drift_plan",
    "tampered_checksum",
    "stale_provenance",
)
# the check each defect is expected to trip
DEFECT_CHECK = {
    "blank_mandatory_field": "documentation_completeness",
    "patient_overlap": "patient_split",
    "over_ceiling_leakage": "leakage_ceiling",
    "missing_agreement": "annotation_reliability",
    "missing_drift_plan": "drift_plan",
    "tampered_checksum": "checksum_manifest",
    "stale_provenance": "provenance_integrity",
}
BLANKED_FIELD = ("motivation", "known_non_goals")
DRIFT_FIELDS = {"datasheet": [("maintenance", "data_drift_monitoring")], "card": [("governance", "monitoring_metrics"), ("governance", "update_triggers")]}
STAMP = "1.0.0"
T0 = "2024-03-01T09:00:00+00:00"

DATASHEET_VALUES: dict[str, Any] = {
    "motivation.primary_clinical_tasks": "ICD code assignment and note-type classification",
    "motivation.target_setting": "Inpatient and emergency documentation, single academic centre",
    "motivation.known_non_goals": "Direct patient care decisions; billing automation",
    "motivation.no_clinical_advice_disclaimer": True,
    "composition.data_sources": "Synthetic notes produced by the clinaudit fixture generator",
    "composition.time_span": "2010-2019 admissions",
    "composition.unit_of_analysis": "note",
    "composition.population_coverage": "Adult inpatients; demographics not modelled in the synthetic corpus",
    "composition.language": "English",
    "composition.note_types": "progress, discharge, radiology, nursing, ed, consult",
    "collection.extraction_queries": "Notes with a non-empty body, one per encounter",
    "collection.inclusion_exclusion_criteria": "Exclude notes under 40 tokens",
    "collection.deduplication": "Exact duplicates removed before splitting; near duplicates audited",
    "collection.text_normalization_steps": "Lowercasing, whitespace collapse; see metrics/config/preprocess.json",
    "deid_privacy.deid_method": "Hybrid: versioned regex patterns plus manual review",
    "deid_privacy.phi_residual_risk_assumptions": "Residual names and dates expected in free-text consult notes",
    "deid_privacy.manual_review_protocol": "Risk-ranked sample, double review, error taxonomy per PHI category",
    "deid_privacy.privacy_threat_model": "Linkage through dates, rare diagnoses and locations by an insider with auxiliary data",
    "deid_privacy.access_controls": "Data use agreement, access logging, re-identification attempts prohibited",
    "labeling.label_definitions": "Primary ICD code per note",
    "labeling.coding_systems": "ICD-10-CM",
    "labeling.annotation_instructions": "Code the principal reason for the encounter",
    "labeling.adjudication": "Third coder resolves disagreements",
    "labeling.inter_annotator_agreement": "metrics/agreement.json",
    "missingness_quality.field_level_missingness": "metrics/missingness.dat",
    "missingness_quality.documentation_bias": "ED notes do not record admission year; nursing notes are not coded",
    "missingness_quality.outliers": "Very long notes capped in the length histogram overflow bin",
    "missingness_quality.noise_sources": "Copy-forward text and templated sections",
    "splits_leakage.split_strategy": "Patient-level 70/15/15 split with a fixed seed",
    "splits_leakage.patient_level_splitting": True,
    "splits_leakage.similarity_leakage_audit": "metrics/leakage.json",
    "splits_leakage.contamination_checks": "Benchmark contamination not applicable: no public benchmark overlap",
    "maintenance.versioning_policy": "Semantic versions; every change re-runs the release gate",
    "maintenance.data_drift_monitoring": "Yearly PSI on ICD code histogram; alert above 0.2",
    "maintenance.deprecation": "Superseded versions withdrawn after 12 months",
    "maintenance.audit_log_retention": "Provenance logs retained for 7 years",
}

CARD_VALUES: dict[str, Any] = {
    "overview.architecture_family": "Encoder-only transformer",
    "overview.training_objective": "Multi-class cross-entropy on primary ICD code",
    "overview.parameter_count": 110000000,
    "overview.compute": "1 GPU, 6 hours",
    "overview.release_date": "2024-03-01",
    "intended_use.target_workflow": "Coding assistance with human confirmation",
    "intended_use.user_role_assumptions": "Certified clinical coders",
    "intended_use.decision_boundaries": "Suggestions only; never auto-submitted",
    "intended_use.contraindicated_uses": "Diagnosis, triage, or any patient-facing use",
    "training_data.linked_datasheets": "datasheet/datasheet.json",
    "training_data.preprocessing_hashes": ["metrics/config/preprocess.json", "metrics/config/phi_patterns.json"],
    "training_data.filtering_criteria": "As in the linked datasheet",
    "evaluation.benchmarks": "Held-out patient-level test split",
    "evaluation.subgroup_slices": "Per note type and admission year",
    "evaluation.calibration": "Expected calibration error with 15 bins",
    "evaluation.robustness_tests": "Template perturbation and abbreviation expansion",
    "evaluation.statistical_uncertainty": "Percentile bootstrap, 1000 replicates, fixed seed",
    "limitations.known_error_modes": "Confuses related codes within a chapter",
    "limitations.ood_behaviors": "Degrades on note types absent from training",
    "limitations.documentation_caveats": "Synthetic corpus; rates are illustrative",
    "governance.monitoring_metrics": "Monthly macro-F1 on audited sample; PSI of predicted codes",
    "governance.update_triggers": "PSI above 0.2 or F1 drop above 5 points",
    "governance.rollback_plan": "Previous signed release redeployed within one day",
    "governance.human_oversight": "Coding lead reviews weekly disagreement reports",
    "ethics_safety.bias_analysis": "Per-service error rates reported",
    "ethics_safety.privacy_risks": "Memorisation probes on rare strings",
    "ethics_safety.harm_mitigation": "Suggestions require coder acceptance",
    "ethics_safety.escalation_paths": "Incidents to the clinical safety officer",
}

PREPROCESS = {
    "tokenizer": "lowercase-alnum-runs",
    "rules": ["collapse_whitespace", "strip_control_chars"],
    "language_filters": ["en"],
    "version": "1.0.0",
}

DISCLOSURES = {
    "label_leakage": {"declared": False, "justification": "Labels are assigned from structured codes, not from note text in other splits"},
    "contamination": {"declared": False, "justification": "The base model was not pre-trained on this institution's notes"},
}


def filled_document(schema: Schema, values: dict[str, Any], version: str = "v1", stamp: str = STAMP) -> dict:
    """Document dict carrying ``values`` (keyed ``section.field``) with version stamps."""
    sections: dict[str, dict] = {}
    for spec in schema.fields:
        content = values.get(f"{spec.section_id}.{spec.field_id}")
        sections.setdefault(spec.section_id, {})[spec.field_id] = {
            "content": content,
            "version_stamp": stamp if content is not None else None,
        }
    return {"doc_kind": schema.doc_kind, "version": version, "sections": sections}


def golden_datasheet() -> dict:
    return filled_document(default_schema("datasheet"), DATASHEET_VALUES)


def golden_card() -> dict:
    return filled_document(default_schema("card"), CARD_VALUES)


def blank_fields(doc: dict, keys: Iterable[tuple[str, str]]) -> dict:
    doc = json.loads(json.dumps(doc))
    for section, fid in keys:
        doc["sections"][section][fid] = {"content": None, "version_stamp": None}
    return doc


def make_annotations(corpus, seed: int, flip_rate: float = 0.1) -> dict:
    """Two coders: A is the primary code, B disagrees on a seeded share of notes."""
    rng = np.random.default_rng(seed)
    a = [n.icd_codes[0] if n.icd_codes else "none" for n in corpus]
    labels = sorted(set(a))
    b = list(a)
    for i in np.flatnonzero(rng.random(len(a)) < flip_rate):
        b[i] = labels[(labels.index(a[i]) + 1 + int(rng.integers(0, len(labels) - 1))) % len(labels)] if len(labels) > 1 else a[i]
    return {"items": [n.note_id for n in corpus], "rater_a": a, "rater_b": b}


@dataclass
class ReleaseConfig:
    n_patients: int = 400
    notes_per_patient: int = 2
    seed: int = 7
    knobs: FixtureKnobs = field(default_factory=lambda: FixtureKnobs(icd_shift=0.1))
    bootstrap_B: int = 200
    defect: str | None = None


def _stage(cfg: ReleaseConfig, stage: Path) -> dict:
    knobs = cfg.knobs
    if cfg.defect == "patient_overlap":
        knobs = replace(knobs, patient_overlap=3)
    elif cfg.defect == "over_ceiling_leakage":
        knobs = replace(knobs, duplicate_across_splits=2)
    corpus, split = make_fixture(cfg.n_patients, cfg.notes_per_patient, cfg.seed, knobs)

    ds, card = golden_datasheet(), golden_card()
    if cfg.defect == "blank_mandatory_field":
        ds = blank_fields(ds, [BLANKED_FIELD])
    elif cfg.defect == "missing_drift_plan":
        ds = blank_fields(ds, DRIFT_FIELDS["datasheet"])
        card = blank_fields(card, DRIFT_FIELDS["card"])
    (stage / "datasheet").mkdir(parents=True)
    (stage / "model_card").mkdir(parents=True)
    write_json(stage / "datasheet/datasheet.json", ds)
    write_json(stage / "datasheet/schema.json", default_schema("datasheet").to_dict())
    write_json(stage / "model_card/card.json", card)
    write_json(stage / "model_card/schema.json", default_schema("card").to_dict())

    m = stage / "metrics"
    (m / "data").mkdir(parents=True)
    (m / "config").mkdir(parents=True)
    write_corpus(corpus, m / "data/corpus.jsonl")
    write_split(split, m / "data/split.json")
    annotations = make_annotations(corpus, cfg.seed)
    write_json(m / "data/annotations.json", annotations)
    patterns = default_patterns()
    write_json(m / "config/phi_patterns.json", patterns.to_dict())
    write_json(m / "config/preprocess.json", PREPROCESS)

    docs = {
        "datasheet": (parse_doc(stage / "datasheet/datasheet.json", default_schema("datasheet")), default_schema("datasheet")),
        "card": (parse_doc(stage / "model_card/card.json", default_schema("card")), default_schema("card")),
    }
    sim = SimilarityConfig()
    inputs = SuiteInputs(
        corpus=corpus,
        split=split,
        annotations=None if cfg.defect == "missing_agreement" else annotations,
        patterns=patterns,
        docs=docs,
        disclosures=DISCLOSURES,
        similarity=sim,
        seed=cfg.seed,
        bootstrap_B=cfg.bootstrap_B,
        phi_sample_size=25,
    )
    report = compute(inputs)
    write_outputs(report, m)
    record = audit_splits(corpus, split, sim, DISCLOSURES)

    _write_provenance(stage, record, corpus)
    return report


def _write_provenance(stage: Path, record, corpus) -> None:
    def h(rel: str) -> str:
        return sha256_file(stage / rel)

    raw_hash = canonical_hash({"raw": [n.note_id for n in corpus]})
    deid_hash = canonical_hash({"deid": [n.note_id for n in corpus], "patterns": h("metrics/config/phi_patterns.json")})
    ckpt_hash = canonical_hash({"checkpoint": h("metrics/data/split.json"), "labels": h("metrics/data/annotations.json")})
    entities = [
        ProvEntity("raw_extract", "data", raw_hash, STAMP),
        ProvEntity("phi_patterns", "code", h("metrics/config/phi_patterns.json"), STAMP, "metrics/config/phi_patterns.json"),
        ProvEntity("preprocess_config", "code", h("metrics/config/preprocess.json"), STAMP, "metrics/config/preprocess.json"),
        ProvEntity("deid_notes", "data", deid_hash, STAMP),
        ProvEntity("normalized_notes", "data", h("metrics/data/corpus.jsonl"), STAMP, "metrics/data/corpus.jsonl"),
        ProvEntity("label_set", "data", h("metrics/data/annotations.json"), STAMP, "metrics/data/annotations.json"),
        ProvEntity("split_manifest", "data", h("metrics/data/split.json"), STAMP, "metrics/data/split.json"),
        ProvEntity("leakage_audit", "document", h("metrics/leakage.json"), STAMP, "metrics/leakage.json"),
        ProvEntity("model_ckpt", "model", ckpt_hash, STAMP),
        ProvEntity("eval_report", "document", h("metrics/report.json"), STAMP, "metrics/report.json"),
        ProvEntity("datasheet_doc", "document", h("datasheet/datasheet.json"), STAMP, "datasheet/datasheet.json"),
        ProvEntity("card_doc", "document", h("model_card/card.json"), STAMP, "model_card/card.json"),
    ]
    ts = [f"2024-03-0{d}T09:00:00+00:00" for d in range(1, 9)]
    acts = [
        ProvActivity("extraction", "extraction", ts[0], "data-engineer", {
            "source_system": "fixture-ehr", "query": "all notes, admissions 2010-2019", "timestamp": ts[0],
            "filters": {"min_tokens": 40}, "output_hash": raw_hash}),
        ProvActivity("deidentification", "deidentification", ts[1], "privacy-officer", {
            "method_version": "regex-scan 1.0 + manual review", "phi_patterns": "metrics/config/phi_patterns.json",
            "manual_review_rate": 0.05, "output_hash": deid_hash}),
        ProvActivity("normalization", "normalization", ts[2], "data-engineer", {
            "tokenizer": PREPROCESS["tokenizer"], "rules": PREPROCESS["rules"], "language_filters": PREPROCESS["language_filters"],
            "output_hash": h("metrics/data/corpus.jsonl")}),
        ProvActivity("labeling", "labeling", ts[3], "annotation-lead", {
            "guideline_version": "coding-guide 2.1", "annotators": ["coder-a", "coder-b"], "adjudication_rule": "third coder",
            "reliability_stats": "metrics/agreement.json"}),
        record.provenance_activity(activity_id="split_sampling", agent_id="leakage-auditor", timestamp=ts[4]),
        ProvActivity("training_run", "training_run", ts[5], "ml-engineer", {
            "model_config": "encoder-base", "code_commit": "0f3c2a1", "hyperparameters": {"lr": 2e-5, "epochs": 3},
            "compute_env": "python 3.11, 1 GPU", "checkpoints": [ckpt_hash]}),
        ProvActivity("evaluation_run", "evaluation_run", ts[6], "ml-engineer", {
            "dataset_version": STAMP, "metric_definitions": "macro-F1; completeness; leakage; PSI; kappa",
            "confidence_intervals": "percentile bootstrap", "error_audit": "metrics/report.json"}),
        ProvActivity("release", "release", ts[7], "release-manager", {
            "license_terms": "research use under data use agreement", "documentation_bundle": ["datasheet/datasheet.json", "model_card/card.json"],
            "signed_checksums": "release/checksums", "deprecation_policy": "12 months after supersession"}),
    ]
    agents = [
        ProvAgent("data-engineer", "person", "Data engineering"),
        ProvAgent("privacy-officer", "person", "Privacy office"),
        ProvAgent("annotation-lead", "person", "Annotation lead"),
        ProvAgent("leakage-auditor", "software", "clinaudit leakage audit"),
        ProvAgent("ml-engineer", "person", "Modelling team"),
        ProvAgent("release-manager", "person", "Release manager"),
    ]
    U, G = "used", "wasGeneratedBy"
    edges = [
        ProvEdge(G, "extraction", "raw_extract"),
        ProvEdge(U, "deidentification", "raw_extract"),
        ProvEdge(U, "deidentification", "phi_patterns"),
        ProvEdge(G, "deidentification", "deid_notes"),
        ProvEdge(U, "normalization", "deid_notes"),
        ProvEdge(U, "normalization", "preprocess_config"),
        ProvEdge(G, "normalization", "normalized_notes"),
        ProvEdge(U, "labeling", "normalized_notes"),
        ProvEdge(G, "labeling", "label_set"),
        ProvEdge(U, "split_sampling", "normalized_notes"),
        ProvEdge(G, "split_sampling", "split_manifest"),
        ProvEdge(G, "split_sampling", "leakage_audit"),
        ProvEdge(U, "training_run", "split_manifest"),
        ProvEdge(U, "training_run", "label_set"),
        ProvEdge(G, "training_run", "model_ckpt"),
        ProvEdge(U, "evaluation_run", "model_ckpt"),
        ProvEdge(U, "evaluation_run", "split_manifest"),
        ProvEdge(G, "evaluation_run", "eval_report"),
        ProvEdge(U, "release", "eval_report"),
        ProvEdge(G, "release", "datasheet_doc"),
        ProvEdge(G, "release", "card_doc"),
    ]
    bundle = build_bundle(entities, acts, agents, edges)
    if bundle.issues:
        raise AssertionError(f"release builder produced an invalid provenance graph: {bundle.issues}")
    save_bundle(bundle, stage / "provenance")


def _inputs(stage: Path) -> BundleInputs:
    return BundleInputs(
        datasheet=stage / "datasheet/datasheet.json",
        card=stage / "model_card/card.json",
        provenance=stage / "provenance",
        metrics=stage / "metrics",
        datasheet_schema=stage / "datasheet/schema.json",
        card_schema=stage / "model_card/schema.json",
    )


def build_release(out_dir: str | Path, cfg: ReleaseConfig | None = None) -> Path:
    """Stage, compute metrics and provenance, then assemble into ``out_dir``."""
    cfg = cfg or ReleaseConfig()
    if cfg.defect is not None and cfg.defect not in DEFECTS:
        raise ValueError(f"unknown defect {cfg.defect!r}; choose from {DEFECTS}")
    out = Path(out_dir)
    with tempfile.TemporaryDirectory() as tmp:
        stage = Path(tmp)
        _stage(cfg, stage)
        assemble_bundle(_inputs(stage), out)
        if cfg.defect == "stale_provenance":
            # a preprocessing change that never made it into the provenance log
            cfg_path = stage / "metrics/config/preprocess.json"
            write_json(cfg_path, {**PREPROCESS, "rules": PREPROCESS["rules"] + ["expand_abbreviations"]})
            assemble_bundle(_inputs(stage), out, update=True)
    if cfg.defect == "tampered_checksum":
        manifest = out / "release/checksums"
        lines = manifest.read_text(encoding="utf-8").splitlines(keepends=True)
        first = lines[0]
        lines[0] = ("0" if first[0] != "0" else "1") + first[1:]
        manifest.write_text("".join(lines), encoding="utf-8", newline="\n")
    return out
