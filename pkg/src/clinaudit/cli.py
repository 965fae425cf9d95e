"""Command line entry point: ``clinaudit <subcommand> ...``.

Exit status: 0 ok/pass, 1 gate failure or findings, 2 usage or I/O error.
Outputs go to ``--out`` (default ``$CLINAUDIT_OUT`` or ``./clinaudit-out``).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import datfiles
from .bundle import BundleInputs, MissingComponentError, ReleaseCollisionError, assemble_bundle, verify_bundle
from .corpus_io import CorpusError, load_corpus, load_split, write_corpus, write_split
from .fixture import FixtureKnobs, make_fixture
from .gate import PolicyError, default_policy, gate, load_policy
from .hashing import write_json
from .leakage import METHODS, SimilarityConfig, leak_curve, patient_overlap
from .metrics import DriftInputError, load_patterns, psi_trace
from .provenance import diff_versions, lineage, load_bundle, verify_hashes
from .schema import completeness, default_schema, load_schema, parse_doc

OK, FINDINGS, USAGE = 0, 1, 2


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("CLINAUDIT_OUT") or "clinaudit-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, name: str, obj: dict, text: str, dat: str | None = None) -> None:
    """Write ``name`` in the requested format to the output dir and echo to stdout."""
    out = _out_dir(args)
    if args.format == "json":
        write_json(out / f"{name}.json", obj)
        print(json.dumps(obj, indent=2, sort_keys=True))
    elif args.format == "dat":
        if dat is None:
            raise SystemExit(f"--format dat is not available for {args.command}")
        path = datfiles.write(out / f"{name}.dat", dat)
        print(path)
    else:
        (out / f"{name}.txt").write_text(text, encoding="utf-8")
        print(text, end="")


def cmd_validate(args) -> int:
    schema = load_schema(args.schema) if args.schema else default_schema(args.kind)
    doc = parse_doc(args.document, schema)
    rep = completeness(doc, schema)
    body = rep.to_dict()
    body["warnings"] = list(doc.warnings)
    lines = [f"completeness C = {rep.render()} ({rep.n_populated}/{rep.n_mandatory} mandatory fields)"]
    lines += [f"  missing: {m}" for m in body["missing_mandatory"]]
    lines += [f"  warning: {w}" for w in doc.warnings]
    _emit(args, f"{args.kind}_completeness", body, "\n".join(lines) + "\n", datfiles.section_pct(body["per_section"]))
    return OK if rep.exact == 1 else FINDINGS


def cmd_metrics(args) -> int:
    from .suite import SuiteInputs, compute, load_annotations, write_outputs

    corpus = load_corpus(args.corpus)
    docs = {}
    for kind, path in (("datasheet", args.datasheet), ("card", args.card)):
        if path:
            schema = default_schema(kind)
            docs[kind] = (parse_doc(path, schema), schema)
    inputs = SuiteInputs(
        corpus=corpus,
        split=load_split(args.split, corpus) if args.split else None,
        annotations=load_annotations(args.annotations) if args.annotations else None,
        patterns=load_patterns(args.patterns) if args.patterns else None,
        docs=docs,
        seed=args.seed,
        bootstrap_B=args.bootstrap,
    )
    report = compute(inputs)
    for p in write_outputs(report, _out_dir(args)):
        print(p)
    return OK


def _sim_config(args) -> SimilarityConfig:
    kw = {"method": args.method, "seed": args.seed}
    if args.thresholds:
        kw["thresholds"] = tuple(float(t) for t in args.thresholds.split(","))
    return SimilarityConfig(**kw)


def cmd_leak(args) -> int:
    corpus = load_corpus(args.corpus)
    split = load_split(args.split, corpus)
    curve = leak_curve(corpus, split, _sim_config(args))
    overlap = patient_overlap(corpus, split)
    body = {"curve": curve.to_dict(), "patient_overlap": overlap.to_dict()}
    text = "".join(f"L({t:.2f}) = {100 * r:.2f}%  ({c}/{curve.n_test})\n" for (t, r), c in zip(curve.points, curve.counts))
    text += f"patients in more than one split: {len(overlap.patients)}\n"
    _emit(args, "leak", body, text, datfiles.threshold_pct(curve.points))
    return OK


def cmd_drift(args) -> int:
    corpus = load_corpus(args.corpus)
    years = sorted({n.admission_year for n in corpus if n.admission_year is not None})
    if not years:
        raise DriftInputError("no note has an admission_year")
    trace = psi_trace(corpus, args.feature, args.baseline if args.baseline is not None else years[0], years)
    text = "".join(f"{p.period} {p.psi:.6f}\n" for p in trace.points)
    _emit(args, "psi", trace.to_dict(), text, datfiles.year_psi((p.period, p.psi) for p in trace.points))
    return OK


def cmd_prov(args) -> int:
    if args.action == "verify":
        bundle = load_bundle(args.bundle, strict=False)
        rep = verify_hashes(bundle, args.root or Path(args.bundle).parent)
        body = {"issues": [i.__dict__ for i in bundle.issues], "integrity": rep.to_dict()}
        lines = [f"issue {i.code}: {i.message}" for i in bundle.issues]
        lines += [f"{c.status:10} {c.entity_id}" for c in rep.checks]
        _emit(args, "prov_verify", body, "\n".join(lines) + "\n")
        return OK if rep.ok and not bundle.issues else FINDINGS
    bundle = load_bundle(args.bundle)
    if args.action == "lineage":
        tree = lineage(bundle, args.entity)
        _emit(args, f"lineage_{args.entity}", tree.to_dict(), " -> ".join(tree.event_chain) + "\n")
        return OK
    diff = diff_versions(bundle, args.entity, args.other)
    body = diff.to_dict()
    _emit(args, f"diff_{args.entity}_{args.other}", body, json.dumps(body, indent=2, sort_keys=True) + "\n")
    return OK


def cmd_fixture(args) -> int:
    out = _out_dir(args)
    if args.bundle or args.defect:
        from .release import ReleaseConfig, build_release

        cfg = ReleaseConfig(n_patients=args.patients, notes_per_patient=args.notes_per_patient, seed=args.seed, defect=args.defect)
        print(build_release(out / "bundle", cfg))
        return OK
    knobs = FixtureKnobs(duplicate_across_splits=args.duplicates, patient_overlap=args.patient_overlap, icd_shift=args.icd_shift)
    corpus, split = make_fixture(args.patients, args.notes_per_patient, args.seed, knobs)
    write_corpus(corpus, out / "corpus.jsonl")
    write_split(split, out / "split.json")
    print(out / "corpus.jsonl")
    print(out / "split.json")
    return OK


def cmd_assemble(args) -> int:
    inputs = BundleInputs(
        datasheet=Path(args.datasheet),
        card=Path(args.card),
        provenance=Path(args.provenance),
        metrics=Path(args.metrics),
        datasheet_schema=Path(args.datasheet_schema) if args.datasheet_schema else None,
        card_schema=Path(args.card_schema) if args.card_schema else None,
        signature=Path(args.signature) if args.signature else None,
    )
    try:
        print(assemble_bundle(inputs, _out_dir(args), update=args.update))
    except ReleaseCollisionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FINDINGS
    return OK


def cmd_gate(args) -> int:
    policy = load_policy(args.policy) if args.policy else default_policy()
    rep = gate(args.bundle, policy)
    out = _out_dir(args)
    (out / "gate_report.json").write_text(rep.to_json(), encoding="utf-8")
    (out / "gate_report.txt").write_text(rep.summary(), encoding="utf-8")
    print(rep.to_json() if args.format == "json" else rep.summary(), end="")
    return OK if rep.passed else FINDINGS


def cmd_verify(args) -> int:
    rep = verify_bundle(args.bundle)
    body = rep.to_dict()
    lines = [body["status"]] + [f"  [{f.kind}] {f.subject}: {f.detail}" for f in rep.findings]
    _emit(args, "verification", body, "\n".join(lines) + "\n")
    return OK if rep.consistent else FINDINGS


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default $CLINAUDIT_OUT or ./clinaudit-out)")
    common.add_argument("--seed", type=int, default=0, help="seed for every random draw")
    common.add_argument("--format", choices=("text", "json", "dat"), default="text")
    common.add_argument("--policy", help="gate policy JSON (default: bundled policy)")

    p = argparse.ArgumentParser(prog="clinaudit", description="Transparency audits for clinical text corpora and model releases.")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("validate", parents=[common], help="check a datasheet or model card against its schema")
    s.add_argument("document")
    s.add_argument("--kind", choices=("datasheet", "card"), default="datasheet")
    s.add_argument("--schema")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("metrics", parents=[common], help="run the corpus metric suite")
    s.add_argument("corpus")
    s.add_argument("--split")
    s.add_argument("--annotations")
    s.add_argument("--patterns")
    s.add_argument("--datasheet")
    s.add_argument("--card")
    s.add_argument("--bootstrap", type=int, default=1000, help="bootstrap replicates")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("leak", parents=[common], help="similarity leakage curve between train and test")
    s.add_argument("corpus")
    s.add_argument("split")
    s.add_argument("--method", choices=METHODS, default="char_ngram_jaccard")
    s.add_argument("--thresholds", help="comma-separated, e.g. 0.3,0.5,0.7,0.85")
    s.set_defaults(func=cmd_leak)

    s = sub.add_parser("drift", parents=[common], help="PSI trace across admission years")
    s.add_argument("corpus")
    s.add_argument("--feature", default="icd_histogram", choices=("icd_histogram", "note_type_histogram", "length_histogram"))
    s.add_argument("--baseline", type=int)
    s.set_defaults(func=cmd_drift)

    s = sub.add_parser("prov", parents=[common], help="provenance lineage, diff and hash verification")
    s.add_argument("action", choices=("lineage", "diff", "verify"))
    s.add_argument("bundle", help="provenance directory")
    s.add_argument("entity", nargs="?")
    s.add_argument("other", nargs="?")
    s.add_argument("--root", help="artifact root for entity paths (default: parent of the provenance dir)")
    s.set_defaults(func=cmd_prov)

    s = sub.add_parser("fixture", parents=[common], help="generate a synthetic corpus or a full release bundle")
    s.add_argument("--patients", type=int, default=400)
    s.add_argument("--notes-per-patient", type=int, default=2)
    s.add_argument("--duplicates", type=int, default=0)
    s.add_argument("--patient-overlap", type=int, default=0)
    s.add_argument("--icd-shift", type=float, default=0.0)
    s.add_argument("--bundle", action="store_true", help="build a complete release bundle")
    s.add_argument("--defect", help="plant one named defect in the bundle")
    s.set_defaults(func=cmd_fixture)

    s = sub.add_parser("assemble", parents=[common], help="lay out a release bundle and write its checksum manifest")
    for name in ("datasheet", "card", "provenance", "metrics"):
        s.add_argument(f"--{name}", required=True)
    s.add_argument("--datasheet-schema")
    s.add_argument("--card-schema")
    s.add_argument("--signature", help="detached signature over release/checksums")
    s.add_argument("--update", action="store_true", help="replace an existing, different release")
    s.set_defaults(func=cmd_assemble)

    s = sub.add_parser("gate", parents=[common], help="evaluate a bundle against the release policy")
    s.add_argument("bundle")
    s.set_defaults(func=cmd_gate)

    s = sub.add_parser("verify", parents=[common], help="recompute metrics and hashes of a bundle")
    s.add_argument("bundle")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else OK
    if args.command == "prov" and args.action in ("lineage", "diff") and (args.entity is None or (args.action == "diff" and args.other is None)):
        parser.print_usage(sys.stderr)
        return USAGE
    try:
        return args.func(args)
    except (OSError, CorpusError, MissingComponentError, PolicyError, DriftInputError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except SystemExit as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE


if __name__ == "__main__":
    sys.exit(main())
