"""Train/test contamination: patient overlap, near-duplicate scans, L(tau) curves."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Mapping, Sequence

import numpy as np

from . import kernels
from .corpus_io import Corpus, SplitManifest
from .hashing import canonical_hash
from .provenance import ProvActivity

METHODS = ("token_jaccard", "char_ngram_jaccard", "minhash_estimate")
DEFAULT_THRESHOLDS = (0.30, 0.50, 0.70, 0.85)
_TOKEN = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class SimilarityConfig:
    method: str = "char_ngram_jaccard"
    n: int = 5
    k: int = 128
    bands: int = 32
    rows: int = 4
    thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if not self.thresholds:
            raise ValueError("need at least one threshold")
        if any(not 0.0 < t <= 1.0 for t in self.thresholds):
            raise ValueError("thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be strictly increasing")
        if self.method != "token_jaccard" and self.n < 2:
            raise ValueError("character n-gram size must be >= 2")
        if self.method == "minhash_estimate":
            if self.k < 16:
                raise ValueError("minhash needs k >= 16 signatures")
            if self.bands * self.rows != self.k:
                raise ValueError("bands * rows must equal k")

    def to_dict(self) -> dict:
        return dict(self.__dict__, thresholds=list(self.thresholds))


def tokens(text: str) -> list[str]:
    """Lowercase, split on runs of non-alphanumerics."""
    return _TOKEN.findall(text.lower())


def _token_hash(tok: str) -> int:
    return int.from_bytes(hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest(), "little")


def shingles(text: str, cfg: SimilarityConfig) -> np.ndarray:
    """Sorted, unique 64-bit hashes of the comparison units of ``text``."""
    if cfg.method == "token_jaccard":
        toks = set(tokens(text))
        return np.unique(np.fromiter((_token_hash(t) for t in toks), dtype=np.uint64, count=len(toks)))
    norm = " ".join(text.lower().split())
    cp = np.frombuffer(norm.encode("utf-32-le"), dtype=np.uint32)
    return np.unique(kernels.window_hashes(cp, cfg.n))


def _csr(sets: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    ptr = np.zeros(len(sets) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([s.shape[0] for s in sets])
    val = np.concatenate(sets) if sets else np.empty(0, dtype=np.uint64)
    return ptr, val.astype(np.uint64, copy=False)


def minhash_seeds(cfg: SimilarityConfig) -> np.ndarray:
    return np.random.default_rng(cfg.seed).integers(0, 2**63 - 1, size=cfg.k, dtype=np.int64).astype(np.uint64)


def similarity(a: str, b: str, cfg: SimilarityConfig | None = None) -> float:
    """Jaccard similarity of two texts (exact, or MinHash estimate)."""
    cfg = cfg or SimilarityConfig()
    sa, sb = shingles(a, cfg), shingles(b, cfg)
    if sa.size == 0 and sb.size == 0:
        return 1.0
    if sa.size == 0 or sb.size == 0:
        return 0.0
    ptr, val = _csr([sa, sb])
    if cfg.method == "minhash_estimate":
        sig = kernels.minhash_signatures(ptr, val, minhash_seeds(cfg))
        return float(np.mean(sig[0] == sig[1]))
    return float(kernels.pair_jaccard(ptr, val, ptr, val, np.array([0]), np.array([1]))[0])


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OverlapReport:
    patients: Mapping[str, Mapping[str, tuple[str, ...]]]

    @property
    def empty(self) -> bool:
        return not self.patients

    def to_dict(self) -> dict:
        return {"n_patients": len(self.patients), "patients": {p: {s: list(ids) for s, ids in v.items()} for p, v in self.patients.items()}}


def patient_overlap(corpus: Corpus, split: SplitManifest) -> OverlapReport:
    """Patients whose notes appear in more than one split."""
    out = {}
    for patient in sorted(corpus.by_patient):
        per: dict[str, list[str]] = {}
        for nid in corpus.by_patient[patient]:
            s = split.assignment.get(nid)
            if s is not None:
                per.setdefault(s, []).append(nid)
        if len(per) > 1:
            out[patient] = {s: tuple(sorted(ids)) for s, ids in sorted(per.items())}
    return OverlapReport(out)


@dataclass(frozen=True)
class Offender:
    test_id: str
    train_id: str
    similarity: float


@dataclass(frozen=True)
class LeakCurve:
    method: str
    thresholds: tuple[float, ...]
    counts: tuple[int, ...]
    n_test: int
    n_train: int
    offenders: Mapping[float, tuple[Offender, ...]]
    best: Mapping[str, tuple[str | None, float]] = field(repr=False)

    @property
    def points(self) -> list[tuple[float, float]]:
        return [(t, c / self.n_test) for t, c in zip(self.thresholds, self.counts)]

    def rate(self, tau: float) -> float:
        return self.counts[self.thresholds.index(tau)] / self.n_test

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n_test": self.n_test,
            "n_train": self.n_train,
            "points": [{"threshold": t, "count": c, "rate": c / self.n_test} for t, c in zip(self.thresholds, self.counts)],
            "offenders": {
                f"{t:.2f}": [{"test_id": o.test_id, "train_id": o.train_id, "similarity": o.similarity} for o in offs]
                for t, offs in self.offenders.items()
            },
        }


class EmptyPartitionError(ValueError):
    pass


def _best_matches(test_sets, train_sets, cfg: SimilarityConfig) -> tuple[np.ndarray, np.ndarray]:
    q_ptr, q_val = _csr(test_sets)
    r_ptr, r_val = _csr(train_sets)
    if cfg.method != "minhash_estimate":
        return kernels.max_jaccard(q_ptr, q_val, r_ptr, r_val)
    seeds = minhash_seeds(cfg)
    q_sig = kernels.minhash_signatures(q_ptr, q_val, seeds)
    r_sig = kernels.minhash_signatures(r_ptr, r_val, seeds)
    buckets: list[dict[bytes, list[int]]] = []
    for b in range(cfg.bands):
        band = np.ascontiguousarray(r_sig[:, b * cfg.rows : (b + 1) * cfg.rows])
        d: dict[bytes, list[int]] = {}
        for k in range(band.shape[0]):
            d.setdefault(band[k].tobytes(), []).append(k)
        buckets.append(d)
    ia, ib = [], []
    for i in range(q_sig.shape[0]):
        cand: set[int] = set()
        for b in range(cfg.bands):
            cand.update(buckets[b].get(q_sig[i, b * cfg.rows : (b + 1) * cfg.rows].tobytes(), ()))
        for k in sorted(cand):
            ia.append(i)
            ib.append(k)
    best = np.zeros(len(test_sets), dtype=np.float64)
    arg = np.full(len(test_sets), -1, dtype=np.int64)
    if ia:
        sims = kernels.pair_jaccard(q_ptr, q_val, r_ptr, r_val, np.array(ia), np.array(ib))
        for i, k, s in zip(ia, ib, sims):
            if s > best[i] or arg[i] < 0:
                best[i] = s
                arg[i] = k
    return best, arg


def leak_curve(corpus: Corpus, split: SplitManifest, cfg: SimilarityConfig | None = None) -> LeakCurve:
    """Share of test notes whose best train similarity is at or above each threshold.

    Exact methods score all test x train pairs.  ``minhash_estimate`` uses
    banded signatures to pick candidates and then re-scores them with exact
    character n-gram Jaccard, so reported similarities are always exact.
    """
    cfg = cfg or SimilarityConfig()
    train_ids = split.ids("train")
    test_ids = split.ids("test")
    if not train_ids or not test_ids:
        raise EmptyPartitionError("leakage curve needs non-empty train and test partitions")
    scfg = cfg if cfg.method != "minhash_estimate" else SimilarityConfig(method="char_ngram_jaccard", n=cfg.n, thresholds=cfg.thresholds)
    train_sets = [shingles(corpus.by_id[i].text, scfg) for i in train_ids]
    test_sets = [shingles(corpus.by_id[i].text, scfg) for i in test_ids]
    best, arg = _best_matches(test_sets, train_sets, cfg)
    best_map = {tid: ((train_ids[a] if a >= 0 else None), float(s)) for tid, s, a in zip(test_ids, best, arg)}
    counts = []
    offenders = {}
    for tau in cfg.thresholds:
        offs = tuple(Offender(tid, train_ids[a], float(s)) for tid, s, a in zip(test_ids, best, arg) if a >= 0 and s >= tau)
        offenders[tau] = offs
        counts.append(len(offs))
    return LeakCurve(cfg.method, cfg.thresholds, tuple(counts), len(test_ids), len(train_ids), offenders, best_map)


# --------------------------------------------------------------------------
# audit record

DEFAULT_CEILINGS = {0.85: 0.005, 0.70: 0.01}
DISCLOSURES = ("label_leakage", "contamination")


@dataclass(frozen=True)
class LeakageAuditRecord:
    overlap: OverlapReport
    curve: LeakCurve
    config: SimilarityConfig
    split_key: str
    seed: int
    ceilings: Mapping[float, float]
    disclosures: Mapping[str, Mapping[str, Any]]
    findings: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not self.findings

    def to_dict(self) -> dict:
        return {
            "split_key": self.split_key,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "patient_overlap": self.overlap.to_dict(),
            "curve": self.curve.to_dict(),
            "ceilings": {f"{t:.2f}": v for t, v in sorted(self.ceilings.items())},
            "disclosures": {k: dict(v) for k, v in self.disclosures.items()},
            "findings": list(self.findings),
            "passed": self.passed,
        }

    @property
    def hash(self) -> str:
        return canonical_hash(self.to_dict())

    def provenance_activity(self, activity_id: str = "split_sampling", agent_id: str = "leakage-auditor", timestamp: str | None = None) -> ProvActivity:
        """The split-and-sampling activity carrying this audit's results."""
        ts = timestamp or datetime.now(timezone.utc).replace(microsecond=0).isoformat()
        return ProvActivity(
            activity_id=activity_id,
            event_type="split_sampling",
            timestamp=ts,
            agent_id=agent_id,
            fields={
                "split_key": self.split_key,
                "random_seed": self.seed,
                "leakage_audit_results": {
                    "passed": self.passed,
                    "patient_overlap": len(self.overlap.patients),
                    "rates": {f"{t:.2f}": r for t, r in self.curve.points},
                },
                "output_hash": self.hash,
            },
        )


def _valid_disclosure(d: Any) -> bool:
    return isinstance(d, Mapping) and isinstance(d.get("declared"), bool) and isinstance(d.get("justification"), str) and bool(d["justification"].strip())


def audit_splits(
    corpus: Corpus,
    split: SplitManifest,
    cfg: SimilarityConfig | None = None,
    disclosures: Mapping[str, Mapping[str, Any]] | None = None,
    ceilings: Mapping[float, float] | None = None,
) -> LeakageAuditRecord:
    """Patient overlap + similarity curve + author-declared leakage disclosures.

    Label leakage and benchmark contamination are not computed; they are
    recorded as ``{"declared": bool, "justification": str}`` and required.
    """
    cfg = cfg or SimilarityConfig()
    ceilings = dict(DEFAULT_CEILINGS if ceilings is None else ceilings)
    overlap = patient_overlap(corpus, split)
    curve = leak_curve(corpus, split, cfg)
    disclosures = dict(disclosures or {})
    findings = []
    if not overlap.empty:
        findings.append(f"{len(overlap.patients)} patient(s) appear in more than one split")
    for tau, ceiling in sorted(ceilings.items()):
        rate = _rate_at(corpus, split, cfg, curve, tau)
        if rate > ceiling:
            findings.append(f"L({tau:.2f}) = {rate:.4%} exceeds ceiling {ceiling:.4%}")
    for name in DISCLOSURES:
        if not _valid_disclosure(disclosures.get(name)):
            findings.append(f"missing {name} disclosure (declared + justification)")
    return LeakageAuditRecord(overlap, curve, cfg, split.split_key, split.seed, ceilings, disclosures, tuple(findings))


def _rate_at(corpus, split, cfg, curve: LeakCurve, tau: float) -> float:
    if tau in curve.thresholds:
        return curve.rate(tau)
    n_hit = sum(1 for _, s in curve.best.values() if s >= tau)
    return n_hit / curve.n_test
