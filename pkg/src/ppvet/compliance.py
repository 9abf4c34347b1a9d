"""Granularity, minimization and consistency analyses over extracted tuples."""

from __future__ import annotations

import fnmatch
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Literal, Mapping, Sequence

from .cusextract import CusTuple
from .lexicon import FIRST_PARTY, tokenize
from .ontology import BoundsResult, Ontology, UnknownTermError, is_coarse, ppg

Verdict = Literal["disclosed", "vague", "inconsistent"]
SourceTag = Literal["platform_rec", "cross_platform_rec", "genre", "description"]
SOURCE_PRIORITY: tuple[SourceTag, ...] = ("platform_rec", "cross_platform_rec", "genre", "description")
DEFAULT_K = 10
DEFAULT_MAJORITY = 0.5


# -- C3: granularity ----------------------------------------------------------


@dataclass(frozen=True)
class GranularityReport:
    tuples: tuple[CusTuple, ...]
    ctg: tuple[tuple[int, int], ...]  # (entity CTG, data CTG), parallel to tuples
    coarse: tuple[int, ...]  # indices into tuples
    bounds: BoundsResult
    first_party: tuple[int, ...]
    third_party: tuple[int, ...]
    named_company: int
    category_only: int
    threshold: int = 2

    @property
    def ppg(self) -> int:
        return self.bounds.ppg

    @property
    def coarse_data_terms(self) -> list[str]:
        return sorted({self.tuples[i].data for i in self.coarse if self.ctg[i][1] >= self.threshold})

    @property
    def third_party_specified_ratio(self) -> float | None:
        n = self.named_company + self.category_only
        return self.named_company / n if n else None

    def to_dict(self) -> dict:
        return {
            "ppg": self.ppg,
            "bounds": self.bounds.to_dict(),
            "coarse_threshold": self.threshold,
            "tuples": [
                {"entity": t.entity, "data": t.data, "action": t.action, "sentence_index": t.sentence_index,
                 "entity_ctg": c[0], "data_ctg": c[1], "coarse": i in set(self.coarse)}
                for i, (t, c) in enumerate(zip(self.tuples, self.ctg))
            ],
            "coarse_tuple_count": len(self.coarse),
            "coarse_data_terms": self.coarse_data_terms,
            "first_party_tuples": len(self.first_party),
            "third_party_tuples": len(self.third_party),
            "third_party_named_company": self.named_company,
            "third_party_category_only": self.category_only,
        }


def granularity_analysis(
    tuples: Iterable[CusTuple],
    data_ont: Ontology,
    entity_ont: Ontology,
    threshold: int = 2,
) -> GranularityReport:
    """CTG pairs, coarse tuples and bounds over the claimed (non-negated) tuples.

    A third party counts as a named company when it was resolved from a
    company name (keyword rule or an unrecognised proper name), and as
    category-only otherwise.
    """
    claimed = tuple(t for t in tuples if not t.negated)
    data_ont.require(t.data for t in claimed)
    entity_ont.require(t.entity for t in claimed)
    ctg = tuple((entity_ont.granularity(t.entity), data_ont.granularity(t.data)) for t in claimed)
    coarse = tuple(i for i, c in enumerate(ctg) if is_coarse(c, threshold))
    first = tuple(i for i, t in enumerate(claimed) if t.entity == FIRST_PARTY)
    third = tuple(i for i, t in enumerate(claimed) if t.entity != FIRST_PARTY)
    named = sum(1 for i in third if claimed[i].entity_source in ("keyword", "unresolved"))
    bounds = ppg(data_ont, {t.data for t in claimed})
    return GranularityReport(claimed, ctg, coarse, bounds, first, third, named, len(third) - named, threshold)


# -- C4: counterparts and minimization ----------------------------------------


def description_similarity(a: str, b: str) -> float:
    """Token-set Jaccard; the default counterpart ranking signal."""
    sa, sb = set(tokenize(a or "")), set(tokenize(b or ""))
    if not sa or not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


@dataclass(frozen=True)
class CounterpartSet:
    target: str
    counterparts: tuple[tuple[str, SourceTag], ...]
    k: int

    def __post_init__(self):
        if any(a == self.target for a, _ in self.counterparts):
            raise ValueError("an app cannot be its own counterpart")

    @property
    def comparable(self) -> bool:
        return bool(self.counterparts)

    @property
    def ids(self) -> list[str]:
        return [a for a, _ in self.counterparts]

    def to_dict(self) -> dict:
        return {"target": self.target, "k": self.k, "comparable": self.comparable,
                "counterparts": [{"app_id": a, "source": s} for a, s in self.counterparts]}


def find_counterparts(
    target,
    corpus,
    k: int = DEFAULT_K,
    similarity: Callable[[str, str], float] = description_similarity,
    eligible: Callable[[object], bool] | None = None,
) -> CounterpartSet:
    """Rank functionally similar apps as the minimization baseline.

    The pool is the target's platform recommendations, then cross-platform
    recommendations, then same-genre apps; earlier sources outrank later
    ones, then description similarity, then app id.  When the pool has
    fewer than ``k`` apps, the most description-similar remaining apps
    (similarity > 0) fill it, tagged ``description``.

    ``corpus`` is a CorpusStore or any iterable of AppRecords.
    """
    if k < 1:
        raise ValueError("k must be positive")
    records = corpus.records() if hasattr(corpus, "records") else list(corpus)
    by_id = {r.app_id: r for r in records}
    resolve = getattr(corpus, "resolve_id", lambda a: a)
    ok = eligible or (lambda r: True)
    tag: dict[str, SourceTag] = {}

    def offer(app_id: str, source: SourceTag):
        app_id = resolve(app_id)
        r = by_id.get(app_id)
        if r is None or app_id == target.app_id or app_id in tag or not ok(r):
            return
        tag[app_id] = source

    for a in sorted(target.recommendations):
        offer(a, "platform_rec")
    for a in sorted(target.cross_platform_recommendations):
        offer(a, "cross_platform_rec")
    genres = {g.lower() for g in target.genres}
    if genres:
        for r in records:
            if genres & {g.lower() for g in r.genres}:
                offer(r.app_id, "genre")

    def sim(a: str) -> float:
        return similarity(target.description, by_id[a].description)

    ranked = sorted(tag, key=lambda a: (SOURCE_PRIORITY.index(tag[a]), -sim(a), a))[:k]
    if len(ranked) < k and target.description:
        rest = [r.app_id for r in records if r.app_id not in tag and r.app_id != target.app_id and ok(r)]
        scored = sorted(((sim(a), a) for a in rest), key=lambda x: (-x[0], x[1]))
        for s, a in scored:
            if s <= 0 or len(ranked) >= k:
                break
            tag[a] = "description"
            ranked.append(a)
    return CounterpartSet(target.app_id, tuple((a, tag[a]) for a in ranked), k)


@dataclass(frozen=True)
class OverbroadFinding:
    term: str
    covered: int
    total: int
    majority: float

    def __post_init__(self):
        if self.total <= 0 or self.covered / self.total >= self.majority:
            raise ValueError(f"{self.term!r} is covered by {self.covered}/{self.total}, not overbroad")

    @property
    def coverage(self) -> float:
        return self.covered / self.total

    def to_dict(self) -> dict:
        return {"term": self.term, "covered": self.covered, "total": self.total,
                "coverage": round(self.coverage, 6), "majority": self.majority}


def minimization_analysis(
    target_lower: Iterable[str],
    counterparts_lower: Sequence[Iterable[str]],
    ont: Ontology,
    majority: float = DEFAULT_MAJORITY,
    strict: bool = False,
) -> list[OverbroadFinding]:
    """Target lower-bound terms that most counterparts do not claim.

    A counterpart covers ``d`` when its lower bound holds ``d`` or, unless
    ``strict``, any descendant of ``d``.
    """
    if not 0 < majority <= 1:
        raise ValueError(f"majority must be in (0, 1], got {majority}")
    if not counterparts_lower:
        raise ValueError("no counterparts: the app is not comparable")
    target = ont.require(target_lower)
    others = [ont.require(c) for c in counterparts_lower]
    total = len(others)
    out = []
    for d in sorted(target):
        accept = {d} if strict else {d} | ont.descendants(d)
        covered = sum(1 for c in others if accept & c)
        if covered / total < majority:
            out.append(OverbroadFinding(d, covered, total, majority))
    return out


# -- C5: consistency ----------------------------------------------------------


class UnresolvedEvidenceError(KeyError):
    def __init__(self, items: Iterable[str]):
        self.items = sorted(set(items))
        super().__init__(f"evidence not in the evidence map: {', '.join(self.items)}")

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class EvidenceEntry:
    id: str
    kind: Literal["permission", "api", "uri"]
    pattern: str
    data_term: str


class EvidenceMap:
    """Code-level signals (permissions, API calls, URIs) mapped to data terms.

    Patterns may use shell-style wildcards; raw evidence strings are matched
    against them case-sensitively after ids are tried.
    """

    def __init__(self, entries: Iterable[EvidenceEntry], ontology: Ontology | None = None, version: str = ""):
        self.entries = tuple(sorted(entries, key=lambda e: e.id))
        self.version = version
        ids = [e.id for e in self.entries]
        pats = [e.pattern for e in self.entries]
        for label, vals in (("id", ids), ("pattern", pats)):
            dupes = sorted({v for v in vals if vals.count(v) > 1})
            if dupes:
                raise ValueError(f"duplicate evidence {label}s: {dupes}")
        for e in self.entries:
            if e.kind not in ("permission", "api", "uri"):
                raise ValueError(f"evidence {e.id!r} has unknown kind {e.kind!r}")
        if ontology is not None:
            ontology.require(e.data_term for e in self.entries)
        self._by_id = {e.id: e for e in self.entries}
        self._compiled = [(re.compile(fnmatch.translate(e.pattern)), e) for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def terms(self) -> frozenset[str]:
        return frozenset(e.data_term for e in self.entries)

    def resolve(self, item: str) -> EvidenceEntry | None:
        e = self._by_id.get(item)
        if e is not None:
            return e
        for rx, e in self._compiled:
            if rx.match(item):
                return e
        return None

    @classmethod
    def from_dict(cls, doc: Mapping, ontology: Ontology | None = None) -> "EvidenceMap":
        try:
            entries = [EvidenceEntry(e["id"], e["kind"], e["pattern"], e["data_term"]) for e in doc["entries"]]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed evidence map entry: {exc}") from exc
        try:
            return cls(entries, ontology, str(doc.get("version", "")))
        except UnknownTermError as exc:
            raise ValueError(f"evidence map terms not in the data ontology: {exc.terms}") from exc


def load_evidence_map(path: str | Path | None = None, ontology: Ontology | None = None) -> EvidenceMap:
    if path is None:
        text = resources.files("ppvet.data").joinpath("evidence_map.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return EvidenceMap.from_dict(json.loads(text), ontology)


@dataclass(frozen=True)
class ConsistencyFinding:
    term: str
    verdict: Verdict
    evidence: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"term": self.term, "verdict": self.verdict, "evidence": list(self.evidence)}


@dataclass(frozen=True)
class ConsistencyReport:
    findings: tuple[ConsistencyFinding, ...]
    no_policy: bool = False

    def __iter__(self):
        return iter(self.findings)

    def __len__(self) -> int:
        return len(self.findings)

    def by_verdict(self, verdict: Verdict) -> list[str]:
        return [f.term for f in self.findings if f.verdict == verdict]

    def to_dict(self) -> dict:
        return {
            "no_policy": self.no_policy,
            "findings": [f.to_dict() for f in self.findings],
            "disclosed": self.by_verdict("disclosed"),
            "vague": self.by_verdict("vague"),
            "inconsistent": self.by_verdict("inconsistent"),
        }


def classify_term(term: str, bounds: BoundsResult | None) -> Verdict:
    if bounds is None:
        return "inconsistent"
    if term in bounds.claimed:
        return "disclosed"
    if term in bounds.upper:
        return "vague"
    return "inconsistent"


def consistency_analysis(
    evidence: Iterable[str],
    emap: EvidenceMap,
    bounds: BoundsResult | None,
) -> ConsistencyReport:
    """Classify each evidenced data term against the policy's bounds.

    ``bounds=None`` means the app has no policy: every evidenced term is
    inconsistent and the report carries the no-policy flag.
    """
    items = list(evidence)
    hits: dict[str, set[str]] = {}
    unknown = []
    for item in items:
        e = emap.resolve(item)
        if e is None:
            unknown.append(item)
        else:
            hits.setdefault(e.data_term, set()).add(e.id)
    if unknown:
        raise UnresolvedEvidenceError(unknown)
    findings = tuple(ConsistencyFinding(t, classify_term(t, bounds), tuple(sorted(ids)))
                     for t, ids in sorted(hits.items()))
    return ConsistencyReport(findings, no_policy=bounds is None)
