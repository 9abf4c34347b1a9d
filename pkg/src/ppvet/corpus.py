"""App metadata store, policy availability and corpus-level statistics.

The store is a directory::

    records.jsonl      one AppRecord per line, sorted by app id
    index.json         derived indices, rebuilt on every commit
    policies/<id>.*    policy documents (.html or .txt)
    evidence/<id>.json code evidence lists
    pages/             fetched homepages and linked pages (a PageStore)

Reads take an immutable snapshot at open time; writes go through a lock
file and atomic renames, so one writer can coexist with many readers.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import statistics
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import jsonschema

from .lexicon import AppIdentity
from .textproc import (
    EmptyDocumentError,
    PageStore,
    RawDocument,
    extract_privacy_links,
    html_to_plaintext,
    normalize_whitespace,
)


class StoreCorruptionError(RuntimeError):
    pass


class UnknownPlatformError(KeyError):
    def __str__(self) -> str:
        return f"unknown platform {self.args[0]!r}"


class NoPpgError(KeyError):
    def __str__(self) -> str:
        return f"no PPG computed for app {self.args[0]!r}"


def default_platforms() -> tuple[str, ...]:
    doc = json.loads(resources.files("ppvet.data").joinpath("platforms.json").read_text(encoding="utf-8"))
    return tuple(doc["platforms"])


def normalize_name(name: str) -> str:
    """De-duplication key: lowercase, punctuation stripped, whitespace collapsed."""
    return " ".join(re.sub(r"[^\w\s]|_", " ", name.lower()).split())


@dataclass(frozen=True)
class AppRecord:
    app_id: str
    name: str
    platforms: frozenset[str] = frozenset()
    developer: str = ""
    price: float | None = None
    genres: frozenset[str] = frozenset()
    description: str = ""
    homepage: str = ""
    policy_url: str = ""
    recommendations: frozenset[str] = frozenset()
    cross_platform_recommendations: frozenset[str] = frozenset()
    policy_ref: str = ""
    evidence_ref: str = ""

    @property
    def key(self) -> str:
        return normalize_name(self.name)

    def identity(self) -> AppIdentity:
        domains = tuple(d for d in (self.homepage, self.policy_url) if d)
        return AppIdentity(self.app_id, self.name, self.developer, domains)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("platforms", "genres", "recommendations", "cross_platform_recommendations"):
            d[k] = sorted(d[k])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AppRecord":
        sets = ("platforms", "genres", "recommendations", "cross_platform_recommendations")
        kw = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        for k in sets:
            if k in kw:
                kw[k] = frozenset(kw[k])
        return cls(**kw)


RECORD_SCHEMA = {
    "type": "object",
    "required": ["app_id", "name"],
    "properties": {
        "app_id": {"type": "string", "minLength": 1},
        "name": {"type": "string", "minLength": 1},
        "platforms": {"type": "array", "items": {"type": "string"}},
        "developer": {"type": "string"},
        "price": {"type": ["number", "null"], "minimum": 0},
        "genres": {"type": "array", "items": {"type": "string"}},
        "description": {"type": "string"},
        "homepage": {"type": "string"},
        "policy_url": {"type": "string"},
        "recommendations": {"type": "array", "items": {"type": "string"}},
        "cross_platform_recommendations": {"type": "array", "items": {"type": "string"}},
        "policy_ref": {"type": "string"},
        "evidence_ref": {"type": "string"},
    },
}


def _merge(old: AppRecord, new: AppRecord) -> AppRecord:
    """Union the set fields; fill empty scalars from the newcomer; keep the old id."""
    def fill(a, b):
        return a if a not in ("", None) else b
    return replace(
        old,
        platforms=old.platforms | new.platforms,
        genres=old.genres | new.genres,
        recommendations=old.recommendations | new.recommendations,
        cross_platform_recommendations=old.cross_platform_recommendations | new.cross_platform_recommendations,
        developer=fill(old.developer, new.developer),
        price=fill(old.price, new.price),
        description=fill(old.description, new.description),
        homepage=fill(old.homepage, new.homepage),
        policy_url=fill(old.policy_url, new.policy_url),
        policy_ref=fill(old.policy_ref, new.policy_ref),
        evidence_ref=fill(old.evidence_ref, new.evidence_ref),
    )


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class CorpusStore:
    def __init__(self, root: str | Path, platforms: Iterable[str] | None = None, create: bool = False):
        self.root = Path(root)
        if create:
            for sub in ("", "policies", "evidence", "pages"):
                (self.root / sub).mkdir(parents=True, exist_ok=True)
        elif not self.root.is_dir():
            raise FileNotFoundError(f"no corpus store at {self.root}")
        cfg = self.root / "store.json"
        if platforms is not None:
            self.platforms = tuple(platforms)
            if create:
                _atomic_write(cfg, json.dumps({"platforms": list(self.platforms)}, indent=1) + "\n")
        elif cfg.exists():
            self.platforms = tuple(json.loads(cfg.read_text(encoding="utf-8"))["platforms"])
        else:
            self.platforms = default_platforms()
        self._records: dict[str, AppRecord] = {}
        self._aliases: dict[str, str] = {}
        self._load()

    @classmethod
    def create(cls, root: str | Path, platforms: Iterable[str] | None = None) -> "CorpusStore":
        return cls(root, platforms, create=True)

    # -- reading -----------------------------------------------------------

    def _load(self) -> None:
        path = self.root / "records.jsonl"
        if not path.exists():
            return
        for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = AppRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, TypeError) as exc:
                raise StoreCorruptionError(f"{path}: line {n}: {exc}") from exc
            if rec.app_id in self._records:
                raise StoreCorruptionError(f"{path}: line {n}: duplicate app id {rec.app_id!r}")
            self._records[rec.app_id] = rec
        idx_path = self.root / "index.json"
        if not idx_path.exists():
            raise StoreCorruptionError(f"{idx_path} is missing")
        try:
            index = json.loads(idx_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise StoreCorruptionError(f"{idx_path}: {exc}") from exc
        self._aliases = dict(index.get("aliases", {}))
        if index.get("records_sha256") != self._digest():
            raise StoreCorruptionError("index.json does not match records.jsonl")

    def _digest(self) -> str:
        body = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records())
        return hashlib.sha256(body.encode()).hexdigest()

    def records(self) -> list[AppRecord]:
        return [self._records[k] for k in sorted(self._records)]

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, app_id: str) -> bool:
        return self.resolve_id(app_id) in self._records

    def resolve_id(self, app_id: str) -> str:
        return self._aliases.get(app_id, app_id)

    def get(self, app_id: str) -> AppRecord:
        return self._records[self.resolve_id(app_id)]

    def by_platform(self, platform: str) -> list[AppRecord]:
        if platform not in self.platforms:
            raise UnknownPlatformError(platform)
        return [r for r in self.records() if platform in r.platforms]

    def by_name(self, name: str) -> AppRecord | None:
        key = normalize_name(name)
        return next((r for r in self.records() if r.key == key), None)

    def index(self) -> dict:
        """Derived indices; recomputed from the records every time."""
        platforms: dict[str, dict] = {p: {"apps": [], "with_policy_url": 0} for p in self.platforms}
        genres: dict[str, list[str]] = {}
        names: dict[str, str] = {}
        for r in self.records():
            for p in sorted(r.platforms):
                platforms[p]["apps"].append(r.app_id)
                platforms[p]["with_policy_url"] += bool(r.policy_url)
            for g in sorted(r.genres):
                genres.setdefault(g.lower(), []).append(r.app_id)
            names[r.key] = r.app_id
        return {
            "records_sha256": self._digest(),
            "count": len(self._records),
            "by_platform": platforms,
            "by_genre": dict(sorted(genres.items())),
            "by_name": dict(sorted(names.items())),
            "aliases": dict(sorted(self._aliases.items())),
        }

    def stored_index(self) -> dict:
        p = self.root / "index.json"
        return json.loads(p.read_text(encoding="utf-8")) if p.exists() else {}

    def verify(self) -> None:
        """Raise if the stored index drifted from the records or refs dangle."""
        if self.stored_index() != self.index() and self._records:
            raise StoreCorruptionError("stored index is inconsistent with the records")
        for r in self.records():
            for ref in (r.policy_ref, r.evidence_ref):
                if ref and not (self.root / ref).exists():
                    raise StoreCorruptionError(f"{r.app_id}: missing file {ref}")

    def load_policy(self, app_id: str) -> RawDocument | None:
        r = self.get(app_id)
        if not r.policy_ref:
            return None
        path = self.root / r.policy_ref
        if not path.exists():
            raise StoreCorruptionError(f"{r.app_id}: missing file {r.policy_ref}")
        kind = "policy_html" if path.suffix.lower() in (".html", ".htm") else "policy_text"
        content = path.read_bytes()
        if not content:
            # a present-but-empty policy is still a reference; keep it distinct from "absent"
            content = b" "
        return RawDocument(r.app_id, kind, content, r.policy_url or r.policy_ref)

    def load_evidence(self, app_id: str) -> list[str] | None:
        r = self.get(app_id)
        if not r.evidence_ref:
            return None
        path = self.root / r.evidence_ref
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise StoreCorruptionError(f"{r.app_id}: bad evidence file {r.evidence_ref}: {exc}") from exc
        items = doc.get("evidence", []) if isinstance(doc, Mapping) else doc
        return [str(x) for x in items]

    def page_store(self) -> PageStore:
        return PageStore(self.root / "pages")

    # -- writing -----------------------------------------------------------

    @contextmanager
    def _lock(self):
        lock = self.root / ".lock"
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"store {self.root} is locked by another writer ({lock})") from None
        try:
            yield
        finally:
            os.close(fd)
            lock.unlink(missing_ok=True)

    def commit(self, records: Iterable[AppRecord] | None = None, aliases: Mapping[str, str] | None = None) -> None:
        with self._lock():
            if records is not None:
                self._records = {r.app_id: r for r in records}
            if aliases is not None:
                self._aliases = dict(aliases)
            body = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records())
            _atomic_write(self.root / "records.jsonl", body)
            _atomic_write(self.root / "index.json", json.dumps(self.index(), indent=1, sort_keys=True) + "\n")

    def put_policy(self, app_id: str, content: str | bytes, kind: str = "html") -> str:
        ext = {"html": ".html", "text": ".txt"}[kind]
        ref = f"policies/{_safe(app_id)}{ext}"
        data = content.encode("utf-8") if isinstance(content, str) else content
        (self.root / "policies").mkdir(exist_ok=True)
        (self.root / ref).write_bytes(data)
        self._records[self.resolve_id(app_id)] = replace(self.get(app_id), policy_ref=ref)
        self.commit()
        return ref

    def put_evidence(self, app_id: str, evidence: Iterable[str]) -> str:
        ref = f"evidence/{_safe(app_id)}.json"
        (self.root / "evidence").mkdir(exist_ok=True)
        _atomic_write(self.root / ref, json.dumps({"evidence": list(evidence)}, indent=1) + "\n")
        self._records[self.resolve_id(app_id)] = replace(self.get(app_id), evidence_ref=ref)
        self.commit()
        return ref


def _safe(app_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", app_id)


@dataclass
class IngestSummary:
    inserted: int = 0
    merged: int = 0
    unchanged: int = 0
    rejected: list[dict] = field(default_factory=list)

    @property
    def changed(self) -> int:
        return self.inserted + self.merged

    def to_dict(self) -> dict:
        return {"inserted": self.inserted, "merged": self.merged, "unchanged": self.unchanged,
                "rejected": self.rejected}


def ingest_metadata(store: CorpusStore, records: Iterable[AppRecord | Mapping]) -> IngestSummary:
    """Validate, de-duplicate by normalised name, and commit.

    Records sharing a normalised name merge into the first-seen id; the
    dropped id becomes an alias so recommendation links still resolve.
    Invalid records are collected in the summary rather than stopping the
    batch.
    """
    validator = jsonschema.Draft7Validator(RECORD_SCHEMA)
    summary = IngestSummary()
    current = {r.app_id: r for r in store.records()}
    by_key = {r.key: r.app_id for r in current.values()}
    aliases = {k: v for k, v in store._aliases.items()}
    platforms = set(store.platforms)

    for n, item in enumerate(records):
        raw = item.to_dict() if isinstance(item, AppRecord) else dict(item)
        errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.path))
        bad_platforms = sorted(set(raw.get("platforms", [])) - platforms) if not errors else []
        if errors or bad_platforms:
            msg = errors[0].message if errors else f"unknown platforms {bad_platforms}"
            summary.rejected.append({"index": n, "app_id": raw.get("app_id"), "error": msg})
            continue
        rec = AppRecord.from_dict(raw)
        key = rec.key
        if key in by_key:
            kept = by_key[key]
            merged = _merge(current[kept], rec)
            if merged == current[kept]:
                summary.unchanged += 1
            else:
                current[kept] = merged
                summary.merged += 1
            if rec.app_id != kept:
                aliases[rec.app_id] = kept
        elif rec.app_id in current or rec.app_id in aliases:
            summary.rejected.append({"index": n, "app_id": rec.app_id,
                                     "error": "app id already used by a differently named app"})
        else:
            current[rec.app_id] = rec
            by_key[key] = rec.app_id
            summary.inserted += 1
    if summary.changed or aliases != store._aliases:
        store.commit(current.values(), aliases)
    return summary


def read_metadata_jsonl(path: str | Path) -> list[dict]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {n}: {exc.msg}") from exc
    return out


# -- C1 availability ----------------------------------------------------------


@dataclass(frozen=True)
class AvailabilityVerdict:
    app_id: str
    available: bool
    via: str  # "item_page", "homepage", or ""
    links: tuple = ()

    def to_dict(self) -> dict:
        return {"app_id": self.app_id, "available": self.available, "via": self.via,
                "links": [lk.to_dict() for lk in self.links]}


def app_availability(record: AppRecord, pages: PageStore | None, max_hops: int = 2,
                     extended_keywords: bool = False) -> AvailabilityVerdict:
    """Policy link on the item page, else a privacy link near the homepage."""
    if record.policy_url:
        return AvailabilityVerdict(record.app_id, True, "item_page")
    if record.homepage and pages is not None:
        body = pages.get(record.homepage)
        if body:
            doc = RawDocument(record.app_id, "homepage_html", body, record.homepage)
            links = tuple(extract_privacy_links(doc, max_hops, pages, extended_keywords))
            if links:
                return AvailabilityVerdict(record.app_id, True, "homepage", links)
    return AvailabilityVerdict(record.app_id, False, "")


@dataclass(frozen=True)
class AvailabilityStats:
    platform: str
    app_count: int
    policy_count: int
    via_item_page: int = 0
    via_homepage: int = 0

    @property
    def ratio(self) -> float | None:
        return self.policy_count / self.app_count if self.app_count else None

    def to_dict(self) -> dict:
        r = self.ratio
        return {"platform": self.platform, "app_count": self.app_count, "policy_count": self.policy_count,
                "availability": None if r is None else round(r, 6),
                "via_item_page": self.via_item_page, "via_homepage": self.via_homepage}


def availability(store: CorpusStore, platform: str, max_hops: int = 2, extended_keywords: bool = False) -> AvailabilityStats:
    apps = store.by_platform(platform)
    pages = store.page_store()
    verdicts = [app_availability(r, pages, max_hops, extended_keywords) for r in apps]
    item = sum(v.via == "item_page" for v in verdicts)
    home = sum(v.via == "homepage" for v in verdicts)
    return AvailabilityStats(platform, len(apps), item + home, item, home)


# -- PPG percentiles and platform aggregates ---------------------------------


def percentile_of(values: Iterable[float], v: float) -> float:
    """Mean-rank percentile: ties share the average of their strict and weak ranks."""
    vals = list(values)
    if not vals:
        raise ValueError("no values")
    below = sum(1 for x in vals if x < v)
    equal = sum(1 for x in vals if x == v)
    return 100.0 * (below + 0.5 * equal) / len(vals)


def ppg_percentile(ppgs: Mapping[str, int], app_id: str) -> float:
    """Where an app's PPG ranks among all apps with a valid policy (lower is finer)."""
    if app_id not in ppgs:
        raise NoPpgError(app_id)
    return percentile_of(ppgs.values(), ppgs[app_id])


@dataclass(frozen=True)
class PlatformStats:
    platform: str
    app_count: int
    policy_count: int
    availability: float | None
    ppg_mean: float | None = None
    ppg_median: float | None = None
    comparable_count: int = 0
    overbroad_count: int = 0

    def __post_init__(self):
        if self.app_count < 0 or self.policy_count < 0 or self.policy_count > self.app_count:
            raise ValueError("inconsistent platform counts")

    @property
    def overbroad_ratio(self) -> float | None:
        return self.overbroad_count / self.comparable_count if self.comparable_count else None

    def to_dict(self) -> dict:
        def r(x):
            return None if x is None else round(x, 6)
        return {"platform": self.platform, "app_count": self.app_count, "policy_count": self.policy_count,
                "availability": r(self.availability), "ppg_mean": r(self.ppg_mean),
                "ppg_median": r(self.ppg_median), "comparable_count": self.comparable_count,
                "overbroad_count": self.overbroad_count, "overbroad_ratio": r(self.overbroad_ratio)}


def platform_stats(
    store: CorpusStore,
    platform: str,
    ppgs: Mapping[str, int] | None = None,
    overbroad: Mapping[str, bool] | None = None,
    avail: AvailabilityStats | None = None,
) -> PlatformStats:
    """Per-platform availability row plus PPG and overbroad aggregates.

    ``overbroad`` maps comparable app ids to whether they had any finding.
    """
    avail = avail or availability(store, platform)
    ids = {r.app_id for r in store.by_platform(platform)}
    vals = [v for k, v in sorted((ppgs or {}).items()) if k in ids]
    ob = {k: v for k, v in (overbroad or {}).items() if k in ids}
    return PlatformStats(
        platform, avail.app_count, avail.policy_count, avail.ratio,
        statistics.fmean(vals) if vals else None,
        float(statistics.median(vals)) if vals else None,
        len(ob), sum(ob.values()),
    )


# -- reuse --------------------------------------------------------------------


@dataclass(frozen=True)
class ReuseCluster:
    digest: str
    app_ids: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.app_ids)

    def to_dict(self) -> dict:
        return {"digest": self.digest, "size": self.size, "app_ids": list(self.app_ids)}


def policy_plaintext(raw: RawDocument) -> str:
    if raw.kind == "policy_html":
        try:
            return html_to_plaintext(raw)
        except EmptyDocumentError:
            return ""
    return raw.text()


def reuse_detector(store: CorpusStore) -> list[ReuseCluster]:
    """Apps whose policies are identical after whitespace normalisation."""
    groups: dict[str, list[str]] = {}
    for r in store.records():
        raw = store.load_policy(r.app_id)
        if raw is None:
            continue
        text = normalize_whitespace(policy_plaintext(raw))
        if not text:
            continue
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        groups.setdefault(digest, []).append(r.app_id)
    clusters = [ReuseCluster(d, tuple(sorted(ids))) for d, ids in groups.items() if len(ids) > 1]
    return sorted(clusters, key=lambda c: (-c.size, c.app_ids))
