"""Release gate: evaluate a bundle against a policy of blocking/warning checks."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Mapping

from .bundle import (
    AGREEMENT,
    CARD,
    CORPUS,
    DATASHEET,
    MANIFEST,
    PROVENANCE,
    REPORT,
    SIGNATURE,
    SPLIT,
    BundleView,
    manifest_findings,
    open_bundle,
)
from .hashing import canonical_hash, canonical_json, sha256_file
from .leakage import patient_overlap
from .provenance import CHECKSUM_FILE, verify_hashes
from .schema import completeness, is_populated

SEVERITIES = ("blocking", "warning")


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class GateCheck:
    check_id: str
    severity: str
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class GatePolicy:
    checks: tuple[GateCheck, ...]
    policy_version: str
    raw: Mapping[str, Any] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        ids = [c.check_id for c in self.checks]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise PolicyError(f"duplicate check ids: {dupes}")
        for c in self.checks:
            if c.severity not in SEVERITIES:
                raise PolicyError(f"{c.check_id}: severity must be one of {SEVERITIES}")
            if c.check_id not in CHECKS:
                raise PolicyError(f"{c.check_id}: no such check (known: {sorted(CHECKS)})")

    @property
    def policy_hash(self) -> str:
        return canonical_hash(self.raw or self.to_dict())

    def to_dict(self) -> dict:
        return {
            "policy_version": self.policy_version,
            "checks": [{"check_id": c.check_id, "severity": c.severity, "params": dict(c.params)} for c in self.checks],
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "GatePolicy":
        if not isinstance(obj, Mapping) or not isinstance(obj.get("checks"), list):
            raise PolicyError("policy must be an object with a 'checks' list")
        checks = []
        for i, c in enumerate(obj["checks"]):
            if not isinstance(c, Mapping) or "check_id" not in c:
                raise PolicyError(f"checks[{i}] needs a check_id")
            checks.append(GateCheck(c["check_id"], c.get("severity", "blocking"), dict(c.get("params", {}))))
        return cls(tuple(checks), str(obj.get("policy_version", "")), dict(obj))


def load_policy(path: str | Path) -> GatePolicy:
    return GatePolicy.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def default_policy() -> GatePolicy:
    text = resources.files("clinaudit.data").joinpath("default_policy.json").read_text(encoding="utf-8")
    return GatePolicy.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# individual checks; each returns (passed, evidence)


def _ref(view: BundleView, rel: str) -> dict:
    return {"artifact": rel, "artifact_hash": view.file_hash(rel)}


def _field_value(view: BundleView, kind: str, dotted: str):
    if kind not in view.docs:
        return None, False
    doc, schema = view.docs[kind]
    section, _, fid = dotted.partition(".")
    spec = schema.by_key.get((section, fid))
    if spec is None:
        return None, False
    val = doc.values.get((section, fid))
    return val, is_populated(spec, val)


def check_documentation_completeness(view: BundleView, params: Mapping) -> tuple[bool, dict]:
    need = float(params.get("min_completeness", 1.0))
    ev: dict[str, Any] = {}
    ok = True
    for kind, rel in (("datasheet", DATASHEET), ("card", CARD)):
        if kind not in params.get("documents", ("datasheet", "card")):
            continue
        if kind not in view.docs:
            ok = False
            ev[kind] = {**_ref(view, rel), "error": view.errors.get(kind, "not loaded")}
            continue
        rep = completeness(*view.docs[kind])
        ok &= rep.C >= need
        ev[kind] = {**_ref(view, rel), "C": rep.C, "missing_mandatory": rep.to_dict()["missing_mandatory"]}
    return ok, ev


def check_deid_disclosure(view: BundleView, params: Mapping) -> tuple[bool, dict]:
    missing = [f for f in params.get("fields", ()) if not _field_value(view, "datasheet", f)[1]]
    plan = (view.report or {}).get("phi_risk", {}).get("sampling_plan", {})
    has_plan = bool(plan) and int(plan.get("sample_size", 0)) > 0 and bool(plan.get("note_ids"))
    ok = not missing and (has_plan or not params.get("require_sampling_plan", True))
    ev = {"datasheet": _ref(view, DATASHEET), "report": _ref(view, REPORT), "missing_fields": missing, "sampling_plan_size": int(plan.get("sample_size", 0)) if plan else 0}
    return ok, ev


def check_patient_split(view: BundleView, params: Mapping) -> tuple[bool, dict]:
    key = params.get("split_key", "patient")
    limit = int(params.get("max_overlapping_patients", 0))
    ev: dict[str, Any] = {"split": _ref(view, SPLIT), "corpus": _ref(view, CORPUS), "report": _ref(view, REPORT)}
    if view.split is not None and view.corpus is not None:
        overlap = patient_overlap(view.corpus, view.split)
        n_overlap, split_key, source = len(overlap.patients), view.split.split_key, "recomputed"
        ev["patients"] = sorted(overlap.patients)[:20]
    elif view.report and "leakage" in view.report:
        rec = view.report["leakage"]
        n_overlap, split_key, source = rec["patient_overlap"]["n_patients"], rec["split_key"], "recorded"
    else:
        ev["error"] = "no split manifest or recorded leakage audit"
        return False, ev
    declared = _field_value(view, "datasheet", "splits_leakage.patient_level_splitting")[0]
    declared_ok = declared is not None and declared.content is True
    ev.update({"source": source, "split_key": split_key, "overlapping_patients": n_overlap, "datasheet_declares_patient_level": declared_ok})
    return split_key == key and n_overlap <= limit and declared_ok, ev


def check_leakage_ceiling(view: BundleView, params: Mapping) -> tuple[bool, dict]:
    ev: dict[str, Any] = {"report": _ref(view, REPORT)}
    leak = (view.report or {}).get("leakage")
    if not leak:
        ev["error"] = "no recorded leakage audit"
        return False, ev
    rates = {f"{p['threshold']:.2f}": p["rate"] for p in leak["curve"]["points"]}
    ok = True
    rows = {}
    for tau, ceiling in sorted(params.get("ceilings", {}).items()):
        tau = f"{float(tau):.2f}"
        rate = rates.get(tau)
        passed = rate is not None and rate <= ceiling
        ok &= passed
        rows[tau] = {"rate": rate, "ceiling": ceiling, "passed": passed}
    ev.update({"method": leak["curve"]["method"], "thresholds": rows, "record_hash": leak.get("record_hash")})
    return ok, ev


def check_annotation_reliability(view: BundleView, params: Mapping) -> tuple[bool, dict]:
    stats = tuple(params.get("statistics", ("cohen_kappa", "fleiss_kappa")))
    acts = view.provenance.activities_of_type("labeling") if view.provenance else []
    ev: dict[str, Any] = {"labeling_activities": [a.activity_id for a in acts], "records": {}}
    ok = True
    for act in acts:
        ref = act.fields.get("reliability_stats")
        rec: dict[str, Any] = {"reference": ref}
        path = view.root / ref if isinstance(ref, str) and ref else None
        if path is None or not path.is_file() or not path.resolve().is_relative_to(view.root.resolve()):
            rec["error"] = "agreement record not found"
            ok = False
        else:
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
                good = data.get("statistic") in stats and isinstance(data.get("value"), (int, float))
            except (ValueError, AttributeError):
                good = False
            rec.update({"artifact_hash": sha256_file(path), "valid": good})
            if good:
                rec.update({"statistic": data["statistic"], "value": data["value"]})
            ok &= good
        ev["records"][act.activity_id] = rec
    if not acts:
        ev["note"] = "no labeling activity recorded; check not applicable"
    return ok, ev


def check_drift_plan(view: BundleView, params: Mapping) -> tuple[bool, dict]:
    missing = []
    for item in params.get("fields", ()):
        kind, _, dotted = item.partition(":")
        if not _field_value(view, kind, dotted)[1]:
            missing.append(item)
    return not missing, {"datasheet": _ref(view, DATASHEET), "card": _ref(view, CARD), "missing_fields": missing}


def check_provenance_coverage(view: BundleView, params: Mapping) -> tuple[bool, dict]:
    ev: dict[str, Any] = {"provenance": _ref(view, f"{PROVENANCE}/{CHECKSUM_FILE}")}
    if view.provenance is None:
        ev["error"] = view.errors.get("provenance", "not loaded")
        return False, ev
    present = sorted({a.event_type for a in view.provenance.activities.values()})
    missing = [t for t in params.get("event_types", ()) if t not in present]
    issues = [f"{i.code}: {i.message}" for i in view.provenance.issues]
    ev.update({"event_types": present, "missing_event_types": missing, "issues": issues})
    return not missing and not issues, ev


def check_checksum_manifest(view: BundleView, params: Mapping) -> tuple[bool, dict]:
    found = manifest_findings(view.root)
    return not found, {"manifest": _ref(view, MANIFEST), "findings": [f"{f.subject}: {f.detail}" for f in found]}


def check_provenance_integrity(view: BundleView, params: Mapping) -> tuple[bool, dict]:
    ev: dict[str, Any] = {"provenance": _ref(view, f"{PROVENANCE}/{CHECKSUM_FILE}")}
    if view.provenance is None:
        ev["error"] = view.errors.get("provenance", "not loaded")
        return False, ev
    report = verify_hashes(view.provenance, view.root)
    bad = [c for c in report.checks if c.status in ("mismatch", "unreadable") or (c.status == "absent" and c.detail != "no path recorded")]
    ev["checked"] = sum(c.status == "match" for c in report.checks)
    ev["failures"] = [
        {"entity_id": c.entity_id, "path": view.provenance.entities[c.entity_id].path, "status": c.status, "expected": c.expected, "computed": c.computed}
        for c in bad
    ]
    return not bad, ev


def check_detached_signature(view: BundleView, params: Mapping) -> tuple[bool, dict]:
    sig = view.root / SIGNATURE
    return sig.is_file() and sig.stat().st_size > 0, _ref(view, SIGNATURE)


CHECKS: dict[str, Callable[[BundleView, Mapping], tuple[bool, dict]]] = {
    "documentation_completeness": check_documentation_completeness,
    "deid_disclosure": check_deid_disclosure,
    "patient_split": check_patient_split,
    "leakage_ceiling": check_leakage_ceiling,
    "annotation_reliability": check_annotation_reliability,
    "drift_plan": check_drift_plan,
    "provenance_coverage": check_provenance_coverage,
    "checksum_manifest": check_checksum_manifest,
    "provenance_integrity": check_provenance_integrity,
    "detached_signature": check_detached_signature,
}


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    check_id: str
    severity: str
    status: str  # pass | fail | warn
    evidence: Mapping[str, Any]


@dataclass(frozen=True)
class GateReport:
    results: tuple[CheckResult, ...]
    inputs: Mapping[str, Any]
    policy_version: str
    policy_hash: str

    @property
    def verdict(self) -> str:
        return "fail" if any(r.severity == "blocking" and r.status != "pass" for r in self.results) else "pass"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def failed_checks(self) -> list[str]:
        return [r.check_id for r in self.results if r.status == "fail"]

    @property
    def per_check(self) -> dict[str, dict]:
        return {r.check_id: {"severity": r.severity, "status": r.status, "evidence": r.evidence} for r in self.results}

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "policy": {"version": self.policy_version, "hash": self.policy_hash},
            "inputs": dict(self.inputs),
            "checks": [{"check_id": r.check_id, "severity": r.severity, "status": r.status, "evidence": r.evidence} for r in self.results],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def summary(self) -> str:
        lines = [f"verdict: {self.verdict.upper()}  (policy {self.policy_version}, {self.policy_hash[:12]})"]
        for r in self.results:
            lines.append(f"  [{r.status:4}] {r.check_id} ({r.severity})")
        return "\n".join(lines) + "\n"


def _input_hashes(view: BundleView, policy: GatePolicy) -> dict:
    out = {"policy": policy.policy_hash}
    for name, rel in (("corpus", CORPUS), ("datasheet", DATASHEET), ("card", CARD), ("bundle_manifest", MANIFEST), ("report", REPORT), ("agreement", AGREEMENT)):
        out[name] = view.file_hash(rel)
    return out


def gate(bundle_root: str | Path, policy: GatePolicy | None = None, workers: int = 4) -> GateReport:
    """Run every policy check (concurrently) and report in policy order.

    Raises :class:`~clinaudit.bundle.MissingComponentError` naming the absent
    layout directory.
    """
    policy = policy or default_policy()
    view = open_bundle(bundle_root)

    def run(check: GateCheck) -> CheckResult:
        ok, evidence = CHECKS[check.check_id](view, check.params)
        status = "pass" if ok else ("fail" if check.severity == "blocking" else "warn")
        # round-trip through canonical JSON so the evidence is plain data
        return CheckResult(check.check_id, check.severity, status, json.loads(canonical_json(evidence)))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = tuple(pool.map(run, policy.checks))
    return GateReport(results, _input_hashes(view, policy), policy.policy_version, policy.policy_hash)
