"""
Scheduler Policy Repository.

One JSON document per record under ``<root>/records/``; ``<root>/index.json``
is a rebuildable listing. Records are content addressed: the id is the hash
of the canonical spec and is re-checked on every load.
"""

import json
import logging
import math
import os
import re
import tempfile
import threading
import time
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError
from rank_bm25 import BM25Okapi

from scheduler.dsl.library import BUILTIN_FAMILIES, BUILTIN_NAMES, builtin
from scheduler.dsl.parser import parse_policy
from scheduler.dsl.policy import PolicySpec, policy_id, validate_policy
from scheduler.errors import (
    DuplicateDeployment,
    EmptyQuery,
    IllegalTransition,
    InvalidSearchLimit,
    InvalidSpec,
    PromotionBlocked,
    SchedCPError,
    UnknownPolicy,
)
from scheduler.metrics import goal_improvement_pct
from scheduler.models import Goal, PerformanceDelta

logger = logging.getLogger(__name__)

Status = Literal["candidate", "promoted", "retired"]

BM25_K1 = 1.2
BM25_B = 0.75
RETIRE_AFTER_NEGATIVES = 3

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> List[str]:
    return _TOKEN_RE.findall(text.lower())


class OutcomeRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    fingerprint: str
    goal: Goal
    delta: PerformanceDelta
    timestamp: float
    deployment_id: str

    def improvement(self) -> float:
        """Primary-goal improvement in percent, positive is better."""
        return goal_improvement_pct(self.goal, self.delta)


class PolicyRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    spec: PolicySpec
    description: str = ""
    target_families: Tuple[str, ...] = ()
    status: Status = "candidate"
    outcomes: Tuple[OutcomeRecord, ...] = ()
    antipatterns: Tuple[str, ...] = ()
    consecutive_negative: int = Field(default=0, ge=0)

    def indexed_text(self) -> str:
        return " ".join([self.description, " ".join(self.spec.tags), " ".join(self.target_families)])

    def has_positive_outcome(self) -> bool:
        return any(o.improvement() > 0 for o in self.outcomes)

    def summary(self) -> Dict[str, object]:
        return {
            "id": self.id,
            "name": self.spec.name,
            "status": self.status,
            "target_families": list(self.target_families),
            "outcomes": len(self.outcomes),
        }


class _BM25(BM25Okapi):
    """BM25 with the non-negative idf ln(1 + (N - n + 0.5) / (n + 0.5))."""

    def _calc_idf(self, nd):
        for word, freq in nd.items():
            self.idf[word] = math.log(1.0 + (self.corpus_size - freq + 0.5) / (freq + 0.5))

    def term_idf(self, word: str) -> float:
        if word in self.idf:
            return self.idf[word]
        return math.log(1.0 + (self.corpus_size + 0.5) / 0.5)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class PolicyRepository:
    """
    Persistent, content-addressed store of PolicyRecords.

    Readers see consistent snapshots; writers are serialized and each write
    replaces a record file atomically.
    """

    def __init__(
        self,
        root: Union[str, Path],
        seed_builtins: bool = True,
        clock: Callable[[], float] = time.time,
    ):
        self.root = Path(root)
        self.records_dir = self.root / "records"
        self.index_path = self.root / "index.json"
        self.clock = clock
        self._lock = threading.RLock()
        self._records: Dict[str, PolicyRecord] = {}
        self._bm25: Optional[_BM25] = None
        self._bm25_ids: List[str] = []

        self.records_dir.mkdir(parents=True, exist_ok=True)
        self._load()
        if seed_builtins and not self._records:
            for name in BUILTIN_NAMES:
                self.add(builtin(name), target_families=BUILTIN_FAMILIES[name])
            logger.info("seeded repository %s with %d built-in policies", self.root, len(BUILTIN_NAMES))

    # Persistence -----------------------------------------------------------

    def _load(self) -> None:
        for path in sorted(self.records_dir.glob("*.json")):
            try:
                record = PolicyRecord.model_validate_json(path.read_text(encoding="utf-8"))
            except (OSError, ValidationError) as exc:
                logger.warning("skipping unreadable record %s: %s", path.name, exc)
                continue
            if record.id != policy_id(record.spec) or path.stem != record.id:
                logger.warning("skipping tampered record %s (id does not match spec hash)", path.name)
                continue
            self._records[record.id] = record
        self._write_index()
        self._reindex()

    def _write_index(self) -> None:
        listing = [r.summary() for r in sorted(self._records.values(), key=lambda r: r.id)]
        _atomic_write(self.index_path, json.dumps(listing, indent=2, sort_keys=True))

    def _store(self, record: PolicyRecord) -> PolicyRecord:
        with self._lock:
            _atomic_write(self.records_dir / f"{record.id}.json", record.model_dump_json(indent=2))
            self._records[record.id] = record
            self._write_index()
            self._reindex()
        return record

    def _reindex(self) -> None:
        active = sorted((r for r in self._records.values() if r.status != "retired"), key=lambda r: r.id)
        self._bm25_ids = [r.id for r in active]
        corpus = [tokenize(r.indexed_text()) for r in active]
        if not corpus or not any(corpus):
            self._bm25 = None
            return
        self._bm25 = _BM25(corpus, k1=BM25_K1, b=BM25_B)

    # Reads -----------------------------------------------------------------

    def get(self, record_id: str) -> PolicyRecord:
        with self._lock:
            record = self._records.get(record_id)
        if record is None:
            raise UnknownPolicy(f"no policy with id '{record_id}'", {"id": record_id})
        return record

    def find_by_name(self, name: str) -> Optional[PolicyRecord]:
        with self._lock:
            matches = sorted((r for r in self._records.values() if r.spec.name == name), key=lambda r: r.id)
        return matches[0] if matches else None

    def list_records(self, include_retired: bool = True) -> List[PolicyRecord]:
        with self._lock:
            records = list(self._records.values())
        return sorted(
            (r for r in records if include_retired or r.status != "retired"),
            key=lambda r: (r.spec.name, r.id),
        )

    def __len__(self) -> int:
        return len(self._records)

    def search(self, query: str, k: int = 5) -> List[Tuple[PolicyRecord, float]]:
        """
        BM25 ranking of non-retired records; only records sharing at least
        one token with the query are returned, ties broken by id.
        """
        if k < 1:
            raise InvalidSearchLimit(f"k must be >= 1, got {k}", {"k": k})
        terms = list(dict.fromkeys(tokenize(query)))
        if not terms:
            raise EmptyQuery("query has no searchable tokens", {"query": query})
        with self._lock:
            bm25, ids = self._bm25, list(self._bm25_ids)
            records = dict(self._records)
        if bm25 is None:
            return []
        scores = bm25.get_scores(terms)
        hits = []
        for idx, record_id in enumerate(ids):
            if not any(bm25.doc_freqs[idx].get(t) for t in terms):
                continue
            hits.append((records[record_id], float(scores[idx])))
        hits.sort(key=lambda hit: (-hit[1], hit[0].id))
        return hits[:k]

    def self_match_score(self, query: str) -> float:
        """Score a document identical to the query would get in this corpus."""
        terms = list(dict.fromkeys(tokenize(query)))
        with self._lock:
            bm25 = self._bm25
        if not terms or bm25 is None:
            return 0.0
        norm = 1.0 - BM25_B + BM25_B * len(terms) / bm25.avgdl
        return sum(bm25.term_idf(t) * (BM25_K1 + 1.0) / (1.0 + BM25_K1 * norm) for t in terms)

    def normalized_search(self, query: str, k: int = 5) -> List[Tuple[PolicyRecord, float, float]]:
        """Hits with their score divided by the query's self-match score, capped at 1."""
        hits = self.search(query, k)
        ceiling = self.self_match_score(query)
        return [(r, s, min(1.0, s / ceiling) if ceiling > 0 else 0.0) for r, s in hits]

    def search_by_fingerprint(self, fingerprint: str) -> List[PolicyRecord]:
        """Records with outcomes on ``fingerprint``, best improvement first."""
        with self._lock:
            records = list(self._records.values())
        matched = []
        for record in records:
            gains = [o.improvement() for o in record.outcomes if o.fingerprint == fingerprint]
            if gains:
                matched.append((max(gains), record))
        matched.sort(key=lambda item: (-item[0], item[1].id))
        return [record for _, record in matched]

    # Writes ----------------------------------------------------------------

    def add(
        self,
        spec: Union[PolicySpec, str],
        description: Optional[str] = None,
        target_families: Iterable[str] = (),
    ) -> PolicyRecord:
        """Register a candidate; adding an identical spec returns the existing record."""
        try:
            if isinstance(spec, str):
                spec = parse_policy(spec)
            validate_policy(spec)
        except SchedCPError as exc:
            raise InvalidSpec(f"policy rejected: {exc.message}", {"cause": exc.kind, **exc.details}) from None
        record_id = policy_id(spec)
        with self._lock:
            existing = self._records.get(record_id)
            if existing is not None:
                return existing
            record = PolicyRecord(
                id=record_id,
                spec=spec,
                description=description if description is not None else spec.description,
                target_families=tuple(sorted(set(target_families))),
            )
            logger.info("added policy %s (%s)", record_id, spec.name)
            return self._store(record)

    def record_outcome(self, record_id: str, outcome: OutcomeRecord) -> PolicyRecord:
        with self._lock:
            record = self.get(record_id)
            if any(o.deployment_id == outcome.deployment_id for o in record.outcomes):
                raise DuplicateDeployment(
                    f"deployment {outcome.deployment_id} already recorded for {record_id}",
                    {"deployment_id": outcome.deployment_id, "policy_id": record_id},
                )
            negative = outcome.improvement() < 0
            streak = record.consecutive_negative + 1 if negative else 0
            updated = record.model_copy(update={
                "outcomes": record.outcomes + (outcome,),
                "consecutive_negative": streak,
            })
            if streak >= RETIRE_AFTER_NEGATIVES and updated.status != "retired":
                note = f"auto-retired after {streak} consecutive negative outcomes"
                updated = updated.model_copy(update={"status": "retired", "antipatterns": updated.antipatterns + (note,)})
                logger.warning("policy %s %s", record_id, note)
            logger.info("recorded outcome %s for %s (%.2f%%)", outcome.deployment_id, record_id, outcome.improvement())
            return self._store(updated)

    def promote(self, record_id: str) -> PolicyRecord:
        with self._lock:
            record = self.get(record_id)
            if record.status != "candidate":
                raise IllegalTransition(f"cannot promote a {record.status} policy", {"id": record_id, "status": record.status})
            if not record.has_positive_outcome():
                raise PromotionBlocked(f"policy {record_id} has no positive outcome", {"id": record_id})
            logger.info("promoted policy %s", record_id)
            return self._store(record.model_copy(update={"status": "promoted"}))

    def retire(self, record_id: str, reason: Optional[str] = None) -> PolicyRecord:
        with self._lock:
            record = self.get(record_id)
            if record.status == "retired":
                return record
            notes = record.antipatterns + ((reason,) if reason else ())
            logger.info("retired policy %s", record_id)
            return self._store(record.model_copy(update={"status": "retired", "antipatterns": notes}))

    def add_antipattern(self, record_id: str, note: str) -> PolicyRecord:
        with self._lock:
            record = self.get(record_id)
            return self._store(record.model_copy(update={"antipatterns": record.antipatterns + (note,)}))

    # Bundles ---------------------------------------------------------------

    def export_bundle(self) -> Dict[str, object]:
        records = sorted(self.list_records(), key=lambda r: r.id)
        return {"version": 1, "records": [r.model_dump(mode="json") for r in records]}

    def import_bundle(self, bundle: Dict[str, object]) -> List[str]:
        """Merge a bundle; outcomes are unioned by deployment id, status never moves back."""
        order = {"candidate": 0, "promoted": 1, "retired": 2}
        imported = []
        for raw in bundle.get("records", []):
            try:
                record = PolicyRecord.model_validate(raw)
            except ValidationError as exc:
                raise InvalidSpec(f"bundle record is malformed: {exc}") from None
            if record.id != policy_id(record.spec):
                raise InvalidSpec(f"bundle record {record.id} does not match its spec hash", {"id": record.id})
            with self._lock:
                existing = self._records.get(record.id)
                if existing is not None:
                    known = {o.deployment_id for o in existing.outcomes}
                    merged = existing.outcomes + tuple(o for o in record.outcomes if o.deployment_id not in known)
                    status = max(existing.status, record.status, key=order.__getitem__)
                    notes = existing.antipatterns + tuple(n for n in record.antipatterns if n not in existing.antipatterns)
                    record = existing.model_copy(update={"outcomes": merged, "status": status, "antipatterns": notes})
                self._store(record)
            imported.append(record.id)
        return imported
