"""Provenance bundles: entities, activities, agents and the edges between them.

A bundle directory holds ``entities.json``, ``activities.json``,
``agents.json``, ``edges.json`` (each a JSON list) and ``checksums.json``
(file name -> SHA-256 of the other four files).

Edges are PROV-style: ``used`` (activity consumed entity) and
``wasGeneratedBy`` (entity produced by activity).  Oriented as
entity -> generating activity -> used entities the graph must be acyclic,
and no entity may have more than one generator.
"""
from __future__ import annotations

import heapq
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

from .hashing import sha256_file, write_json

logger = logging.getLogger(__name__)

LAYERS = ("data", "code", "model", "document")
EDGE_KINDS = ("used", "wasGeneratedBy")
BUNDLE_FILES = ("entities.json", "activities.json", "agents.json", "edges.json")
CHECKSUM_FILE = "checksums.json"


@lru_cache(maxsize=1)
def event_schema() -> dict:
    text = resources.files("clinaudit.data").joinpath("event_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def minimal_fields(event_type: str) -> tuple[str, ...]:
    return tuple(event_schema()["event_types"][event_type]["fields"])


def exemplar(event_type: str) -> dict:
    return dict(event_schema()["event_types"][event_type]["exemplar"])


EVENT_TYPES = tuple(event_schema()["event_types"])


@dataclass(frozen=True)
class ProvEntity:
    entity_id: str
    layer: str
    hash: str
    version_label: str = ""
    path: str | None = None

    def to_dict(self) -> dict:
        return {"entity_id": self.entity_id, "layer": self.layer, "hash": self.hash, "version_label": self.version_label, "path": self.path}


@dataclass(frozen=True)
class ProvActivity:
    activity_id: str
    event_type: str
    timestamp: str
    agent_id: str
    fields: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "activity_id": self.activity_id,
            "event_type": self.event_type,
            "timestamp": self.timestamp,
            "agent_id": self.agent_id,
            "fields": dict(self.fields),
        }


@dataclass(frozen=True)
class ProvAgent:
    agent_id: str
    kind: str = "person"
    name: str = ""

    def to_dict(self) -> dict:
        return {"agent_id": self.agent_id, "kind": self.kind, "name": self.name}


@dataclass(frozen=True)
class ProvEdge:
    kind: str
    activity_id: str
    entity_id: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "activity_id": self.activity_id, "entity_id": self.entity_id}


@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    ref: str = ""


class BundleValidationError(ValueError):
    def __init__(self, issues: list[Issue]):
        self.issues = issues
        summary = "; ".join(i.message for i in issues[:5])
        super().__init__(f"{len(issues)} provenance issue(s): {summary}")


class UnknownEntityError(KeyError):
    def __str__(self) -> str:
        return f"unknown entity {self.args[0]!r}"


@dataclass(frozen=True)
class ProvBundle:
    entities: Mapping[str, ProvEntity]
    activities: Mapping[str, ProvActivity]
    agents: Mapping[str, ProvAgent]
    edges: tuple[ProvEdge, ...]
    checksums: Mapping[str, str] = field(default_factory=dict)
    issues: tuple[Issue, ...] = ()

    @property
    def generator(self) -> dict[str, str]:
        return {e.entity_id: e.activity_id for e in self.edges if e.kind == "wasGeneratedBy"}

    @property
    def used(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for e in self.edges:
            if e.kind == "used":
                out.setdefault(e.activity_id, []).append(e.entity_id)
        return {k: sorted(v) for k, v in out.items()}

    def generated_by(self, activity_id: str) -> list[str]:
        return sorted(e.entity_id for e in self.edges if e.kind == "wasGeneratedBy" and e.activity_id == activity_id)

    def activities_of_type(self, event_type: str) -> list[ProvActivity]:
        return [a for _, a in sorted(self.activities.items()) if a.event_type == event_type]


def _is_missing(value: Any) -> bool:
    return value is None or (isinstance(value, (str, list, dict)) and len(value) == 0)


def _parse_time(ts: Any) -> bool:
    if not isinstance(ts, str) or not ts:
        return False
    try:
        datetime.fromisoformat(ts.replace("Z", "+00:00"))
    except ValueError:
        return False
    return True


def validate_activity(act: ProvActivity) -> list[Issue]:
    """Minimal-field and timestamp checks for a single activity."""
    if act.event_type not in EVENT_TYPES:
        return [Issue("unknown_event_type", f"activity {act.activity_id!r}: unknown event type {act.event_type!r}", act.activity_id)]
    label = event_schema()["event_types"][act.event_type]["label"]
    issues = [
        Issue(
            "missing_minimal_field",
            f"activity {act.activity_id!r} ({label}): missing minimal field {key!r}",
            f"{act.activity_id}:{key}",
        )
        for key in minimal_fields(act.event_type)
        if _is_missing(act.fields.get(key))
    ]
    if not _parse_time(act.timestamp):
        issues.append(Issue("bad_timestamp", f"activity {act.activity_id!r}: unparseable timestamp {act.timestamp!r}", act.activity_id))
    return issues


def _cycle_issues(entities, activities, edges) -> list[Issue]:
    deps: dict[tuple[str, str], list[tuple[str, str]]] = {}
    for e in edges:
        if e.entity_id not in entities or e.activity_id not in activities:
            continue
        if e.kind == "wasGeneratedBy":
            deps.setdefault(("e", e.entity_id), []).append(("a", e.activity_id))
        else:
            deps.setdefault(("a", e.activity_id), []).append(("e", e.entity_id))
    state: dict[tuple[str, str], int] = {}
    for start in sorted(deps):
        if state.get(start):
            continue
        stack = [(start, iter(sorted(deps.get(start, ()))))]
        state[start] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                continue
            s = state.get(nxt, 0)
            if s == 1:
                return [Issue("cycle", f"provenance graph has a cycle through {nxt[1]!r}", nxt[1])]
            if s == 0:
                state[nxt] = 1
                stack.append((nxt, iter(sorted(deps.get(nxt, ())))))
    return []


def build_bundle(
    entities: Iterable[ProvEntity],
    activities: Iterable[ProvActivity],
    agents: Iterable[ProvAgent],
    edges: Iterable[ProvEdge],
    checksums: Mapping[str, str] | None = None,
    extra_issues: Iterable[Issue] = (),
) -> ProvBundle:
    """Assemble a bundle, collecting every structural violation."""
    issues: list[Issue] = list(extra_issues)
    ent: dict[str, ProvEntity] = {}
    for e in entities:
        if e.entity_id in ent:
            issues.append(Issue("duplicate_id", f"duplicate entity id {e.entity_id!r}", e.entity_id))
        if e.layer not in LAYERS:
            issues.append(Issue("bad_layer", f"entity {e.entity_id!r}: unknown layer {e.layer!r}", e.entity_id))
        if not e.hash:
            issues.append(Issue("empty_hash", f"entity {e.entity_id!r} has no hash", e.entity_id))
        ent[e.entity_id] = e
    acts: dict[str, ProvActivity] = {}
    for a in activities:
        if a.activity_id in acts:
            issues.append(Issue("duplicate_id", f"duplicate activity id {a.activity_id!r}", a.activity_id))
        acts[a.activity_id] = a
        issues.extend(validate_activity(a))
    ags = {g.agent_id: g for g in agents}
    for a in acts.values():
        if a.agent_id not in ags:
            issues.append(Issue("missing_agent", f"activity {a.activity_id!r}: agent {a.agent_id!r} not declared", a.activity_id))
    edges = tuple(edges)
    gens: dict[str, list[str]] = {}
    for e in edges:
        if e.kind not in EDGE_KINDS:
            issues.append(Issue("bad_edge", f"unknown edge kind {e.kind!r}", e.entity_id))
            continue
        if e.activity_id not in acts or e.entity_id not in ent:
            issues.append(Issue("dangling_edge", f"{e.kind} edge {e.activity_id!r} -> {e.entity_id!r} references an unknown id", f"{e.activity_id}:{e.entity_id}"))
            continue
        if e.kind == "wasGeneratedBy":
            gens.setdefault(e.entity_id, []).append(e.activity_id)
    for eid, acts_for in sorted(gens.items()):
        if len(set(acts_for)) > 1:
            issues.append(Issue("multiple_generators", f"entity {eid!r} generated by {sorted(set(acts_for))}", eid))
    issues.extend(_cycle_issues(ent, acts, edges))
    return ProvBundle(
        entities=dict(sorted(ent.items())),
        activities=dict(sorted(acts.items())),
        agents=dict(sorted(ags.items())),
        edges=edges,
        checksums=dict(checksums or {}),
        issues=tuple(issues),
    )


def _read_list(path: Path, issues: list[Issue]) -> list:
    if not path.exists():
        return []
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        issues.append(Issue("unparseable", f"{path.name}: {exc}", path.name))
        return []
    if not isinstance(data, list):
        issues.append(Issue("unparseable", f"{path.name}: expected a JSON list", path.name))
        return []
    return data


def _objects(rows: list, cls, required: tuple[str, ...], fname: str, issues: list[Issue]) -> list:
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict) or any(k not in row for k in required):
            issues.append(Issue("unparseable", f"{fname}[{i}]: needs keys {list(required)}", fname))
            continue
        out.append(cls(**{k: v for k, v in row.items() if k in cls.__dataclass_fields__}))
    return out


def load_bundle(path: str | Path, strict: bool = True) -> ProvBundle:
    """Load and validate a bundle directory.

    All violations are collected into ``bundle.issues``; with ``strict`` a
    non-empty issue list raises :class:`BundleValidationError`.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"provenance directory not found: {root}")
    issues: list[Issue] = []
    ents = _objects(_read_list(root / "entities.json", issues), ProvEntity, ("entity_id", "layer", "hash"), "entities.json", issues)
    acts = _objects(_read_list(root / "activities.json", issues), ProvActivity, ("activity_id", "event_type", "timestamp", "agent_id"), "activities.json", issues)
    ags = _objects(_read_list(root / "agents.json", issues), ProvAgent, ("agent_id",), "agents.json", issues)
    edges = _objects(_read_list(root / "edges.json", issues), ProvEdge, ("kind", "activity_id", "entity_id"), "edges.json", issues)
    checksums: dict[str, str] = {}
    ck = root / CHECKSUM_FILE
    if ck.exists():
        try:
            checksums = json.loads(ck.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            issues.append(Issue("unparseable", f"{CHECKSUM_FILE}: {exc}", CHECKSUM_FILE))
        for fname, expected in sorted(checksums.items()):
            f = root / fname
            if not f.exists():
                issues.append(Issue("checksum_mismatch", f"{fname} listed in {CHECKSUM_FILE} but missing", fname))
            elif sha256_file(f) != expected:
                issues.append(Issue("checksum_mismatch", f"{fname} does not match {CHECKSUM_FILE}", fname))
    bundle = build_bundle(ents, acts, ags, edges, checksums, issues)
    if strict and bundle.issues:
        raise BundleValidationError(list(bundle.issues))
    return bundle


def save_bundle(bundle: ProvBundle, path: str | Path) -> Path:
    """Write the four list files plus a fresh ``checksums.json``."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    write_json(root / "entities.json", [e.to_dict() for e in bundle.entities.values()])
    write_json(root / "activities.json", [a.to_dict() for a in bundle.activities.values()])
    write_json(root / "agents.json", [g.to_dict() for g in bundle.agents.values()])
    edges = sorted(bundle.edges, key=lambda e: (e.kind, e.activity_id, e.entity_id))
    write_json(root / "edges.json", [e.to_dict() for e in edges])
    write_json(root / CHECKSUM_FILE, {f: sha256_file(root / f) for f in BUNDLE_FILES})
    return root


# --------------------------------------------------------------------------
# integrity


@dataclass(frozen=True)
class EntityCheck:
    entity_id: str
    status: str  # match | mismatch | absent | unreadable
    expected: str
    computed: str | None = None
    detail: str = ""


@dataclass(frozen=True)
class IntegrityReport:
    checks: tuple[EntityCheck, ...]

    @property
    def mismatches(self) -> list[EntityCheck]:
        return [c for c in self.checks if c.status == "mismatch"]

    @property
    def ok(self) -> bool:
        return not any(c.status in ("mismatch", "unreadable") for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"entity_id": c.entity_id, "status": c.status, "expected": c.expected, "computed": c.computed, "detail": c.detail}
                for c in self.checks
            ],
        }


def _strip_algo(h: str) -> str:
    return h.split(":", 1)[1] if h.startswith("sha256:") else h


def _check_entity(ent: ProvEntity, root: Path) -> EntityCheck:
    expected = _strip_algo(ent.hash).lower()
    if not ent.path:
        return EntityCheck(ent.entity_id, "absent", expected, detail="no path recorded")
    target = (root / ent.path).resolve()
    if not target.is_relative_to(root):
        return EntityCheck(ent.entity_id, "absent", expected, detail="outside artifact root")
    if not target.is_file():
        return EntityCheck(ent.entity_id, "absent", expected, detail="file not found")
    try:
        computed = sha256_file(target)
    except OSError as exc:
        return EntityCheck(ent.entity_id, "unreadable", expected, detail=str(exc))
    return EntityCheck(ent.entity_id, "match" if computed == expected else "mismatch", expected, computed)


def verify_hashes(bundle: ProvBundle, artifact_root: str | Path, workers: int = 4) -> IntegrityReport:
    """Recompute SHA-256 for every entity with a path under ``artifact_root``."""
    root = Path(artifact_root).resolve()
    ents = [bundle.entities[k] for k in sorted(bundle.entities)]
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        checks = list(pool.map(lambda e: _check_entity(e, root), ents))
    return IntegrityReport(tuple(checks))


# --------------------------------------------------------------------------
# lineage queries


@dataclass(frozen=True)
class LineageTree:
    root: str
    activities: tuple[str, ...]  # topological, ancestors first
    entities: tuple[str, ...]  # ancestor entities, topological
    agents: tuple[str, ...]
    event_chain: tuple[str, ...]
    depth: int

    def to_dict(self) -> dict:
        return {
            "root": self.root,
            "activities": list(self.activities),
            "entities": list(self.entities),
            "agents": list(self.agents),
            "event_chain": list(self.event_chain),
            "depth": self.depth,
        }


def lineage(bundle: ProvBundle, entity_id: str) -> LineageTree:
    """Transitive closure of generating activities and the entities they used."""
    if entity_id not in bundle.entities:
        raise UnknownEntityError(entity_id)
    gen = bundle.generator
    used = bundle.used
    parents: dict[tuple[str, str], list[tuple[str, str]]] = {}
    seen = {("e", entity_id)}
    stack = [("e", entity_id)]
    while stack:
        node = stack.pop()
        kind, nid = node
        if kind == "e":
            ps = [("a", gen[nid])] if nid in gen else []
        else:
            ps = [("e", x) for x in used.get(nid, [])]
        parents[node] = ps
        for p in ps:
            if p not in seen:
                seen.add(p)
                stack.append(p)

    # Kahn over ancestors, ties broken by (id, kind)
    children: dict[tuple[str, str], list[tuple[str, str]]] = {n: [] for n in seen}
    indeg = {n: len(parents[n]) for n in seen}
    for n, ps in parents.items():
        for p in ps:
            children[p].append(n)
    heap = [(n[1], n[0]) for n in seen if indeg[n] == 0]
    heapq.heapify(heap)
    order: list[tuple[str, str]] = []
    while heap:
        nid, kind = heapq.heappop(heap)
        node = (kind, nid)
        order.append(node)
        for c in children[node]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, (c[1], c[0]))

    depth_of: dict[tuple[str, str], int] = {}
    for node in order:
        d = max((depth_of[p] for p in parents[node]), default=0)
        depth_of[node] = d + (1 if node[0] == "a" else 0)
    acts = tuple(n for k, n in order if k == "a")
    ents = tuple(n for k, n in order if k == "e" and n != entity_id)
    return LineageTree(
        root=entity_id,
        activities=acts,
        entities=ents,
        agents=tuple(sorted({bundle.activities[a].agent_id for a in acts})),
        event_chain=tuple(bundle.activities[a].event_type for a in acts),
        depth=depth_of[("e", entity_id)],
    )


@dataclass(frozen=True)
class FieldChange:
    event_type: str
    activity_a: str
    activity_b: str
    field: str
    value_a: Any
    value_b: Any


@dataclass(frozen=True)
class ProvDiff:
    only_a_activities: tuple[str, ...]
    only_b_activities: tuple[str, ...]
    only_a_entities: tuple[str, ...]
    only_b_entities: tuple[str, ...]
    changed: tuple[FieldChange, ...]

    @property
    def empty(self) -> bool:
        return not (self.only_a_activities or self.only_b_activities or self.only_a_entities or self.only_b_entities or self.changed)

    def swapped(self) -> "ProvDiff":
        return ProvDiff(
            self.only_b_activities,
            self.only_a_activities,
            self.only_b_entities,
            self.only_a_entities,
            tuple(FieldChange(c.event_type, c.activity_b, c.activity_a, c.field, c.value_b, c.value_a) for c in self.changed),
        )

    def to_dict(self) -> dict:
        return {
            "only_a_activities": list(self.only_a_activities),
            "only_b_activities": list(self.only_b_activities),
            "only_a_entities": list(self.only_a_entities),
            "only_b_entities": list(self.only_b_entities),
            "changed": [c.__dict__ for c in self.changed],
        }


def diff_versions(bundle: ProvBundle, entity_a: str, entity_b: str) -> ProvDiff:
    """What differs between the lineages of two entities.

    Activities unique to one side are paired with same-type activities unique
    to the other side (in lineage order) and their minimal fields compared.
    """
    la = lineage(bundle, entity_a)
    lb = lineage(bundle, entity_b)
    ents_a = set(la.entities) | {entity_a}
    ents_b = set(lb.entities) | {entity_b}
    acts_a, acts_b = set(la.activities), set(lb.activities)
    only_a = [a for a in la.activities if a not in acts_b]
    only_b = [a for a in lb.activities if a not in acts_a]
    changed: list[FieldChange] = []
    for etype in EVENT_TYPES:
        xs = [a for a in only_a if bundle.activities[a].event_type == etype]
        ys = [b for b in only_b if bundle.activities[b].event_type == etype]
        for a, b in zip(xs, ys):
            fa, fb = bundle.activities[a].fields, bundle.activities[b].fields
            for key in sorted(set(fa) | set(fb)):
                if fa.get(key) != fb.get(key):
                    changed.append(FieldChange(etype, a, b, key, fa.get(key), fb.get(key)))
    return ProvDiff(
        only_a_activities=tuple(only_a),
        only_b_activities=tuple(only_b),
        only_a_entities=tuple(sorted(ents_a - ents_b)),
        only_b_entities=tuple(sorted(ents_b - ents_a)),
        changed=tuple(changed),
    )
