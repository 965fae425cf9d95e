"""Run the whole metric suite on a corpus and persist report + plot data."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from . import datfiles
from .corpus_io import Corpus, SplitManifest
from .hashing import write_json
from .leakage import SimilarityConfig, audit_splits
from .metrics import (
    FIELD_LABELS,
    AgreementResult,
    PatternSet,
    cohen_kappa,
    default_patterns,
    fleiss_kappa,
    length_bins,
    length_histogram,
    missingness,
    phi_risk_scan,
    psi_trace,
)
from .schema import ArtifactDoc, Schema, completeness


@dataclass
class SuiteInputs:
    corpus: Corpus
    split: SplitManifest | None = None
    annotations: Mapping[str, Any] | None = None
    patterns: PatternSet | None = None
    docs: Mapping[str, tuple[ArtifactDoc, Schema]] = field(default_factory=dict)
    disclosures: Mapping[str, Mapping[str, Any]] | None = None
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    ceilings: Mapping[float, float] | None = None
    seed: int = 0
    bootstrap_B: int = 1000
    phi_sample_size: int = 50
    drift_feature: str = "icd_histogram"


def agreement_from_annotations(ann: Mapping[str, Any], B: int, seed: int) -> AgreementResult:
    """``{"rater_a": [...], "rater_b": [...]}`` -> Cohen; ``{"ratings": [[...]]}`` -> Fleiss."""
    if "ratings" in ann:
        return fleiss_kappa(ann["ratings"], B=B, seed=seed)
    return cohen_kappa(ann["rater_a"], ann["rater_b"], B=B, seed=seed)


def compute(inputs: SuiteInputs) -> dict:
    """Metric report as a plain JSON-ready dict (deterministic for fixed inputs)."""
    corpus = inputs.corpus
    report: dict[str, Any] = {"seed": inputs.seed, "n_notes": len(corpus)}
    report["completeness"] = {kind: completeness(doc, schema).to_dict() for kind, (doc, schema) in sorted(inputs.docs.items())}
    report["missingness"] = missingness(corpus, strata_by="note_type").to_dict()
    if inputs.annotations is not None:
        report["agreement"] = agreement_from_annotations(inputs.annotations, inputs.bootstrap_B, inputs.seed).to_dict()
    if inputs.split is not None:
        record = audit_splits(corpus, inputs.split, inputs.similarity, inputs.disclosures, inputs.ceilings)
        report["leakage"] = record.to_dict()
        report["leakage"]["record_hash"] = record.hash
    years = sorted({n.admission_year for n in corpus if n.admission_year is not None})
    if years:
        report["drift"] = psi_trace(corpus, inputs.drift_feature, years[0], years).to_dict()
    patterns = inputs.patterns or default_patterns()
    sample = min(inputs.phi_sample_size, len(corpus))
    report["phi_risk"] = phi_risk_scan(corpus, patterns, sample_size=sample, seed=inputs.seed).to_dict()
    report["length_histogram"] = {"bin_mid": length_bins(), "count": length_histogram(corpus)}
    return report


def dat_files(report: Mapping[str, Any]) -> dict[str, str]:
    """Plot data files derivable from a report."""
    out = {}
    comp = report.get("completeness", {})
    if "datasheet" in comp:
        out["datasheet_completeness.dat"] = datfiles.section_pct(comp["datasheet"]["per_section"])
    if "leakage" in report:
        pts = [(p["threshold"], p["rate"]) for p in report["leakage"]["curve"]["points"]]
        out["leak.dat"] = datfiles.threshold_pct(pts)
    if "phi_risk" in report:
        out["phi_risk.dat"] = datfiles.risk_count(report["phi_risk"]["histogram"])
    if "missingness" in report:
        per = report["missingness"]["per_field"]
        out["missingness.dat"] = datfiles.field_pct({FIELD_LABELS[f]: v for f, v in per.items()})
    if "drift" in report:
        out["psi.dat"] = datfiles.year_psi((p["period"], p["psi"]) for p in report["drift"]["points"])
    if "length_histogram" in report:
        lh = report["length_histogram"]
        out["len_hist.dat"] = datfiles.bin_mid_count(lh["bin_mid"], lh["count"])
    return out


def write_outputs(report: Mapping[str, Any], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    write_json(out / "report.json", report)
    written.append(out / "report.json")
    if "agreement" in report:
        write_json(out / "agreement.json", report["agreement"])
        written.append(out / "agreement.json")
    if "leakage" in report:
        write_json(out / "leakage.json", report["leakage"])
        written.append(out / "leakage.json")
    for name, text in dat_files(report).items():
        written.append(datfiles.write(out / name, text))
    return written


def load_annotations(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
