"""Release bundle layout, assembly and continuous verification.

Layout (directory names are fixed)::

    datasheet/   datasheet.json, schema.json
    model_card/  card.json, schema.json
    provenance/  entities.json, activities.json, agents.json, edges.json, checksums.json
    metrics/     report.json, agreement.json, leakage.json, *.dat,
                 config/ (phi_patterns.json, preprocess.json), data/ (private inputs)
    release/     SUMMARY.md, checksums [, checksums.sig]

``release/checksums`` lists ``<sha256>  <path>`` for every other file in the
bundle, sorted by path.  A detached ``checksums.sig`` from an external signer
is accepted and checked for presence only.
"""
from __future__ import annotations

import json
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .corpus_io import Corpus, CorpusError, SplitManifest, load_corpus, load_split
from .hashing import sha256_bytes, sha256_file
from .metrics import PatternSet, default_patterns, load_patterns
from .provenance import ProvBundle, load_bundle, verify_hashes
from .schema import ArtifactDoc, Schema, completeness, default_schema, load_schema, parse_doc

LAYOUT = ("datasheet", "model_card", "provenance", "metrics", "release")
DATASHEET = "datasheet/datasheet.json"
DATASHEET_SCHEMA = "datasheet/schema.json"
CARD = "model_card/card.json"
CARD_SCHEMA = "model_card/schema.json"
PROVENANCE = "provenance"
REPORT = "metrics/report.json"
AGREEMENT = "metrics/agreement.json"
CORPUS = "metrics/data/corpus.jsonl"
SPLIT = "metrics/data/split.json"
ANNOTATIONS = "metrics/data/annotations.json"
PATTERNS = "metrics/config/phi_patterns.json"
SUMMARY = "release/SUMMARY.md"
MANIFEST = "release/checksums"
SIGNATURE = "release/checksums.sig"
REL_TOL = 1e-9


class MissingComponentError(FileNotFoundError):
    pass


class ReleaseCollisionError(FileExistsError):
    pass


def _rel_files(root: Path) -> list[str]:
    out = []
    for d in LAYOUT:
        base = root / d
        if base.is_dir():
            out.extend(p.relative_to(root).as_posix() for p in base.rglob("*") if p.is_file())
    return sorted(f for f in out if f not in (MANIFEST, SIGNATURE))


def render_manifest(hashes: Mapping[str, str]) -> str:
    return "".join(f"{h}  {p}\n" for p, h in sorted(hashes.items()))


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            h, _, p = line.partition("  ")
            out[p] = h
    return out


def manifest_hashes(root: str | Path) -> dict[str, str]:
    root = Path(root)
    return {f: sha256_file(root / f) for f in _rel_files(root)}


def render_summary(report: Mapping[str, Any] | None) -> str:
    """Short reviewer-facing transparency summary built from recorded metrics."""
    lines = ["# Transparency summary", ""]
    if not report:
        lines.append("No metric report recorded.")
        return "\n".join(lines) + "\n"
    for kind, comp in sorted(report.get("completeness", {}).items()):
        missing = ", ".join(comp["missing_mandatory"]) or "none"
        lines.append(f"- {kind} completeness: {comp['C_rendered']} (missing mandatory: {missing})")
    if "leakage" in report:
        rows = ", ".join(f"{p['threshold']:.2f}: {100 * p['rate']:.2f}%" for p in report["leakage"]["curve"]["points"])
        lines.append(f"- leakage L(tau): {rows}")
        lines.append(f"- patients in more than one split: {report['leakage']['patient_overlap']['n_patients']}")
    if "agreement" in report:
        a = report["agreement"]
        lines.append(f"- {a['statistic']}: {a['value']:.4f} [{a['ci_low']:.4f}, {a['ci_high']:.4f}] (B={a['bootstrap_B']}, seed={a['seed']})")
    if "phi_risk" in report:
        p = report["phi_risk"]
        lines.append(f"- PHI risk proxy: mean {p['mean_proxy']:.4f}, {100 * p['frac_high_risk']:.2f}% at risk >= {p['threshold']}")
    if "drift" in report:
        pts = report["drift"]["points"]
        lines.append(f"- max PSI ({report['drift']['feature']}): {max(p['psi'] for p in pts):.6f}")
    return "\n".join(lines) + "\n"


@dataclass
class BundleInputs:
    datasheet: Path
    card: Path
    provenance: Path
    metrics: Path
    datasheet_schema: Path | None = None
    card_schema: Path | None = None
    signature: Path | None = None


def _planned_copies(inputs: BundleInputs) -> dict[str, Path]:
    plan: dict[str, Path] = {DATASHEET: Path(inputs.datasheet), CARD: Path(inputs.card)}
    if inputs.datasheet_schema:
        plan[DATASHEET_SCHEMA] = Path(inputs.datasheet_schema)
    if inputs.card_schema:
        plan[CARD_SCHEMA] = Path(inputs.card_schema)
    for src_dir, dest in ((Path(inputs.provenance), PROVENANCE), (Path(inputs.metrics), "metrics")):
        if not src_dir.is_dir():
            raise MissingComponentError(f"{dest}/ input directory not found: {src_dir}")
        for p in sorted(src_dir.rglob("*")):
            if p.is_file():
                plan[f"{dest}/{p.relative_to(src_dir).as_posix()}"] = p
    for rel, src in plan.items():
        if not src.is_file():
            raise MissingComponentError(f"input for {rel} not found: {src}")
    return plan


def assemble_bundle(inputs: BundleInputs, out_dir: str | Path, update: bool = False) -> Path:
    """Lay out a release directory and write ``release/checksums``.

    Re-running on unchanged inputs rewrites nothing and yields a byte-identical
    manifest.  If the directory already holds a release whose manifest would
    change, :class:`ReleaseCollisionError` is raised unless ``update`` is set.
    """
    out = Path(out_dir)
    plan = _planned_copies(inputs)
    if DATASHEET_SCHEMA not in plan and not (out / DATASHEET_SCHEMA).exists():
        plan_bytes = {DATASHEET_SCHEMA: (json.dumps(default_schema("datasheet").to_dict(), indent=2, sort_keys=True) + "\n").encode()}
    else:
        plan_bytes = {}
    if CARD_SCHEMA not in plan and not (out / CARD_SCHEMA).exists():
        plan_bytes[CARD_SCHEMA] = (json.dumps(default_schema("card").to_dict(), indent=2, sort_keys=True) + "\n").encode()
    report_src = plan.get(REPORT)
    report = json.loads(report_src.read_text(encoding="utf-8")) if report_src else None
    plan_bytes[SUMMARY] = render_summary(report).encode("utf-8")

    new_hashes = {f: sha256_file(out / f) for f in _rel_files(out)} if out.exists() else {}
    for rel, src in plan.items():
        new_hashes[rel] = sha256_file(src)
    for rel, data in plan_bytes.items():
        new_hashes[rel] = sha256_bytes(data)
    manifest = render_manifest(new_hashes)
    existing = out / MANIFEST
    if existing.exists():
        old = existing.read_text(encoding="utf-8")
        if old == manifest:
            return out
        if not update:
            raise ReleaseCollisionError(f"{out} already holds a different release; pass update=True to replace it")

    for d in LAYOUT:
        (out / d).mkdir(parents=True, exist_ok=True)
    for rel, src in plan.items():
        dest = out / rel
        if dest.exists() and dest.resolve() == src.resolve():
            continue
        dest.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(src, dest)
    for rel, data in plan_bytes.items():
        dest = out / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_bytes(data)
    if inputs.signature:
        shutil.copyfile(inputs.signature, out / SIGNATURE)
    (out / MANIFEST).write_text(manifest, encoding="utf-8", newline="\n")
    return out


def seal(root: str | Path) -> None:
    """Rewrite ``release/checksums`` (and the summary) from the files on disk."""
    root = Path(root)
    report = json.loads((root / REPORT).read_text(encoding="utf-8")) if (root / REPORT).exists() else None
    (root / "release").mkdir(parents=True, exist_ok=True)
    (root / SUMMARY).write_text(render_summary(report), encoding="utf-8", newline="\n")
    (root / MANIFEST).write_text(render_manifest(manifest_hashes(root)), encoding="utf-8", newline="\n")


# --------------------------------------------------------------------------
# reading a bundle


@dataclass
class BundleView:
    """Everything the gate and verifier read from a bundle, with load errors kept."""

    root: Path
    errors: dict[str, str] = field(default_factory=dict)
    docs: dict[str, tuple[ArtifactDoc, Schema]] = field(default_factory=dict)
    report: dict | None = None
    corpus: Corpus | None = None
    split: SplitManifest | None = None
    annotations: dict | None = None
    patterns: PatternSet | None = None
    provenance: ProvBundle | None = None

    def file_hash(self, rel: str) -> str | None:
        p = self.root / rel
        return sha256_file(p) if p.is_file() else None


def open_bundle(root: str | Path) -> BundleView:
    root = Path(root)
    missing = [d for d in LAYOUT if not (root / d).is_dir()]
    if missing:
        raise MissingComponentError(f"bundle {root} lacks /{'/, /'.join(missing)}/")
    view = BundleView(root=root)
    for kind, doc_rel, schema_rel in (("datasheet", DATASHEET, DATASHEET_SCHEMA), ("card", CARD, CARD_SCHEMA)):
        try:
            schema = load_schema(root / schema_rel) if (root / schema_rel).exists() else default_schema(kind)
            view.docs[kind] = (parse_doc(root / doc_rel, schema), schema)
        except (OSError, ValueError) as exc:
            view.errors[kind] = str(exc)
    if (root / REPORT).exists():
        try:
            view.report = json.loads((root / REPORT).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            view.errors["report"] = str(exc)
    if (root / CORPUS).exists():
        try:
            view.corpus = load_corpus(root / CORPUS)
            if (root / SPLIT).exists():
                view.split = load_split(root / SPLIT, view.corpus)
        except CorpusError as exc:
            view.errors["corpus"] = str(exc)
            if view.corpus is not None and (root / SPLIT).exists():
                # keep the raw manifest so split checks can report the violation
                raw = json.loads((root / SPLIT).read_text(encoding="utf-8"))
                view.split = SplitManifest(raw.get("split_key", "?"), int(raw.get("seed", 0)), dict(raw.get("assignment", {})))
    if (root / ANNOTATIONS).exists():
        view.annotations = json.loads((root / ANNOTATIONS).read_text(encoding="utf-8"))
    try:
        view.patterns = load_patterns(root / PATTERNS) if (root / PATTERNS).exists() else default_patterns()
    except ValueError as exc:
        view.errors["patterns"] = str(exc)
    try:
        view.provenance = load_bundle(root / PROVENANCE, strict=False)
    except (OSError, ValueError) as exc:
        view.errors["provenance"] = str(exc)
    return view


# --------------------------------------------------------------------------
# continuous verification


@dataclass(frozen=True)
class Finding:
    kind: str
    subject: str
    detail: str


@dataclass(frozen=True)
class ContinuousVerificationReport:
    findings: tuple[Finding, ...]

    @property
    def consistent(self) -> bool:
        return not self.findings

    def to_dict(self) -> dict:
        return {
            "consistent": self.consistent,
            "status": "consistent" if self.consistent else "inconsistent release",
            "findings": [f.__dict__ for f in self.findings],
        }


def manifest_findings(root: Path) -> list[Finding]:
    out = []
    if not (root / MANIFEST).exists():
        return [Finding("manifest", MANIFEST, "release checksum manifest missing")]
    recorded = read_manifest(root / MANIFEST)
    actual = manifest_hashes(root)
    for rel in sorted(set(recorded) | set(actual)):
        if rel not in actual:
            out.append(Finding("manifest", rel, "listed in release/checksums but missing"))
        elif rel not in recorded:
            out.append(Finding("manifest", rel, "present but not covered by release/checksums"))
        elif recorded[rel] != actual[rel]:
            out.append(Finding("manifest", rel, f"checksum mismatch: recorded {recorded[rel][:12]}, actual {actual[rel][:12]}"))
    return out


def _close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=REL_TOL, abs_tol=1e-15)


def _compare_metrics(recorded: Mapping[str, Any], fresh: Mapping[str, Any]) -> list[Finding]:
    out: list[Finding] = []

    def bad(subject, detail):
        out.append(Finding("metric_recompute", subject, detail))

    for kind, comp in fresh.get("completeness", {}).items():
        rec = recorded.get("completeness", {}).get(kind)
        if rec is None:
            bad(f"completeness.{kind}", "not recorded")
        elif rec["C"] != comp["C"] or rec["missing_mandatory"] != comp["missing_mandatory"]:
            bad(f"completeness.{kind}", f"recorded C={rec['C']}, recomputed C={comp['C']}")
    for key in ("missingness", "phi_risk", "length_histogram"):
        if key in fresh:
            rec = recorded.get(key)
            exact_keys = {"missingness": ("counts", "n"), "phi_risk": ("histogram", "sampling_plan", "patterns_hash"), "length_histogram": ("count",)}[key]
            if rec is None or any(rec.get(k) != fresh[key].get(k) for k in exact_keys):
                bad(key, "recorded counts differ from recomputation")
    if "agreement" in fresh:
        rec = recorded.get("agreement")
        f = fresh["agreement"]
        if rec is None or not _close(rec["value"], f["value"]):
            bad("agreement", f"recorded {None if rec is None else rec['value']}, recomputed {f['value']}")
        elif (rec["ci_low"], rec["ci_high"]) != (f["ci_low"], f["ci_high"]):
            bad("agreement", "bootstrap CI not reproduced from recorded seed and B")
    if "leakage" in fresh:
        rec = recorded.get("leakage")
        f = fresh["leakage"]
        if rec is None or [p["count"] for p in rec["curve"]["points"]] != [p["count"] for p in f["curve"]["points"]]:
            bad("leakage", "recorded leakage counts differ from recomputation")
        elif rec["patient_overlap"] != f["patient_overlap"] or rec["curve"]["offenders"] != f["curve"]["offenders"]:
            bad("leakage", "recorded offenders or patient overlap differ from recomputation")
    if "drift" in fresh:
        rec = recorded.get("drift")
        f = fresh["drift"]
        if rec is None or len(rec["points"]) != len(f["points"]) or not all(
            a["period"] == b["period"] and _close(a["psi"], b["psi"]) for a, b in zip(rec["points"], f["points"])
        ):
            bad("drift", "recorded PSI trace differs from recomputation")
    return out


def recompute_report(view: BundleView) -> dict:
    """Recompute the metric report from the bundle's own inputs and recorded settings."""
    from .leakage import SimilarityConfig
    from .suite import SuiteInputs, compute

    rec = view.report or {}
    leak = rec.get("leakage", {})
    cfg = leak.get("config")
    sim = SimilarityConfig(**{**cfg, "thresholds": tuple(cfg["thresholds"])}) if cfg else SimilarityConfig()
    ceilings = {float(k): v for k, v in leak.get("ceilings", {}).items()} or None
    inputs = SuiteInputs(
        corpus=view.corpus,
        split=view.split if "leakage" in rec else None,
        annotations=view.annotations if "agreement" in rec else None,
        patterns=view.patterns,
        docs=view.docs,
        disclosures=leak.get("disclosures"),
        similarity=sim,
        ceilings=ceilings,
        seed=int(rec.get("seed", 0)),
        bootstrap_B=int(rec.get("agreement", {}).get("bootstrap_B", 1000)),
        phi_sample_size=int(rec.get("phi_risk", {}).get("sampling_plan", {}).get("sample_size", 50)),
        drift_feature=rec.get("drift", {}).get("feature", "icd_histogram"),
    )
    return compute(inputs)


def verify_bundle(bundle_root: str | Path) -> ContinuousVerificationReport:
    """Schema conformance, recomputed-vs-recorded metrics, and hash consistency."""
    root = Path(bundle_root)
    findings: list[Finding] = []
    try:
        view = open_bundle(root)
    except MissingComponentError as exc:
        return ContinuousVerificationReport((Finding("layout", str(root), str(exc)),))
    for key, err in sorted(view.errors.items()):
        findings.append(Finding("schema" if key in ("datasheet", "card") else "load", key, err))
    findings.extend(manifest_findings(root))
    if view.provenance is not None:
        for issue in view.provenance.issues:
            findings.append(Finding("provenance", issue.ref or issue.code, issue.message))
        for check in verify_hashes(view.provenance, root).checks:
            if check.status in ("mismatch", "unreadable"):
                ent = view.provenance.entities[check.entity_id]
                findings.append(
                    Finding("stale_entity", check.entity_id, f"{ent.path} changed without a provenance update (recorded {check.expected[:12]}, actual {(check.computed or '?')[:12]})")
                )
    if view.report is None:
        findings.append(Finding("metric_recompute", REPORT, "no recorded metric report"))
    elif view.corpus is not None and "corpus" not in view.errors:
        findings.extend(_compare_metrics(view.report, recompute_report(view)))
    else:
        for kind, (doc, schema) in view.docs.items():
            fresh = completeness(doc, schema).to_dict()
            rec = view.report.get("completeness", {}).get(kind)
            if rec is None or rec["C"] != fresh["C"] or rec["missing_mandatory"] != fresh["missing_mandatory"]:
                findings.append(Finding("metric_recompute", f"completeness.{kind}", "recorded completeness differs from recomputation"))
    return ContinuousVerificationReport(tuple(findings))
